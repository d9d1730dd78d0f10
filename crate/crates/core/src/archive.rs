//! Pipeline archive container: config text, codebooks, projector, and
//! optional modulation parameters in one file, integrity-checked per
//! section.
//!
//! Layout: magic `DSQP`, version byte, section count, then sections of
//! `kind u8 | payload_len u64 LE | payload | fnv1a64(payload) u64 LE`.
//! Codebooks are embedded in their own file format; float payloads are f32
//! little-endian, matching the codebook layout, so a save/load round trip
//! reproduces the quantizer bit-for-bit.

use std::path::Path;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::film::{FilmParams, FilmReadout};
use crate::hash::fnv1a64;
use crate::pipeline::{FittedPipeline, ProsodyProjector, QuantizerConfig};
use crate::quantize::GrvqStack;
use crate::scalar::Scalar;

const ARCHIVE_MAGIC: [u8; 4] = *b"DSQP";
const ARCHIVE_VERSION: u8 = 0x01;

const SECTION_CONFIG: u8 = 1;
const SECTION_CONTENT: u8 = 2;
const SECTION_PROSODY: u8 = 3;
const SECTION_SPEAKER: u8 = 4;
const SECTION_PROJECTOR: u8 = 5;
const SECTION_FILM: u8 = 6;

fn push_section(out: &mut Vec<u8>, kind: u8, payload: &[u8]) {
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&fnv1a64(payload).to_le_bytes());
}

fn push_f32s<T: Scalar>(out: &mut Vec<u8>, values: impl IntoIterator<Item = T>) {
    for v in values {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
}

/// Serializes a fitted pipeline.
pub fn pipeline_to_bytes<T: Scalar>(p: &FittedPipeline<T>) -> Vec<u8> {
    let mut sections: Vec<(u8, Vec<u8>)> = Vec::new();
    sections.push((SECTION_CONFIG, p.config().canonical_text().into_bytes()));
    sections.push((SECTION_CONTENT, p.content_codebook().to_bytes()));
    if let Some(stack) = p.prosody_stack() {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(stack.len() as u16).to_le_bytes());
        for cb in stack {
            let bytes = cb.to_bytes();
            payload.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            payload.extend_from_slice(&bytes);
        }
        sections.push((SECTION_PROSODY, payload));
    }
    if let Some(grvq) = p.speaker_grvq() {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(grvq.n_groups() as u16).to_le_bytes());
        payload.extend_from_slice(&(grvq.n_layers() as u16).to_le_bytes());
        payload.extend_from_slice(&(grvq.group_width() as u32).to_le_bytes());
        payload.extend_from_slice(&(grvq.lookup_dim() as u32).to_le_bytes());
        for g in 0..grvq.n_groups() {
            for l in 0..grvq.n_layers() {
                let bytes = grvq.codebook(g, l).to_bytes();
                payload.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
                payload.extend_from_slice(&bytes);
            }
        }
        for g in 0..grvq.n_groups() {
            for l in 0..grvq.n_layers() {
                push_f32s(&mut payload, grvq.projection(g, l).iter().copied());
            }
        }
        sections.push((SECTION_SPEAKER, payload));
    }
    {
        let proj = p.projector();
        let mut payload = Vec::new();
        payload.extend_from_slice(&(proj.out_dim() as u32).to_le_bytes());
        payload.extend_from_slice(&(proj.in_dim() as u32).to_le_bytes());
        payload.extend_from_slice(&proj.explained_variance().to_le_bytes());
        push_f32s(&mut payload, proj.rows().iter().copied());
        sections.push((SECTION_PROJECTOR, payload));
    }
    if let Some(film) = p.film() {
        let m = film.film.out_dim;
        let s = film.film.s_dim;
        let d = film.target_dim;
        let mut payload = Vec::new();
        payload.extend_from_slice(&(m as u32).to_le_bytes());
        payload.extend_from_slice(&(s as u32).to_le_bytes());
        payload.extend_from_slice(&(d as u32).to_le_bytes());
        payload.extend_from_slice(&film.mse.to_le_bytes());
        push_f32s(&mut payload, film.film.scale_weight.iter().copied());
        push_f32s(&mut payload, film.film.scale_bias.iter().copied());
        push_f32s(&mut payload, film.film.shift_weight.iter().copied());
        push_f32s(&mut payload, film.film.shift_bias.iter().copied());
        push_f32s(&mut payload, film.readout.iter().copied());
        sections.push((SECTION_FILM, payload));
    }

    let mut out = Vec::new();
    out.extend_from_slice(&ARCHIVE_MAGIC);
    out.push(ARCHIVE_VERSION);
    out.push(sections.len() as u8);
    for (kind, payload) in sections {
        push_section(&mut out, kind, &payload);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    context: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Truncated {
                context: self.context,
                needed: self.at + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s<T: Scalar>(&mut self, count: usize) -> Result<Vec<T>> {
        let raw = self.take(count * 4)?;
        let mut out = Vec::with_capacity(count);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::MalformedSection {
                    context: self.context,
                    detail: "non-finite float".into(),
                });
            }
            out.push(T::from_f64_lossy(f64::from(v)));
        }
        Ok(out)
    }

    fn done(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::MalformedSection {
                context: self.context,
                detail: format!("{} unread bytes", self.bytes.len() - self.at),
            });
        }
        Ok(())
    }
}

fn read_length_prefixed_codebook<T: Scalar>(c: &mut Cursor) -> Result<Codebook<T>> {
    let len = c.u64()? as usize;
    let bytes = c.take(len)?;
    Codebook::from_bytes(bytes)
}

/// Parses a pipeline archive.
pub fn pipeline_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<FittedPipeline<T>> {
    const CTX: &str = "pipeline archive";
    if bytes.len() < 6 {
        return Err(Error::Truncated {
            context: CTX,
            needed: 6,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != ARCHIVE_MAGIC {
        return Err(Error::BadMagic {
            context: CTX,
            expected: ARCHIVE_MAGIC,
            found: magic,
        });
    }
    if bytes[4] != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            context: CTX,
            found: bytes[4],
            supported: ARCHIVE_VERSION,
        });
    }
    let n_sections = bytes[5] as usize;
    let mut at = 6usize;
    let mut sections: Vec<(u8, &[u8])> = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        if at + 9 > bytes.len() {
            return Err(Error::Truncated {
                context: CTX,
                needed: at + 9,
                available: bytes.len(),
            });
        }
        let kind = bytes[at];
        let len = u64::from_le_bytes(bytes[at + 1..at + 9].try_into().unwrap()) as usize;
        at += 9;
        if at + len + 8 > bytes.len() {
            return Err(Error::Truncated {
                context: CTX,
                needed: at + len + 8,
                available: bytes.len(),
            });
        }
        let payload = &bytes[at..at + len];
        let stored = u64::from_le_bytes(bytes[at + len..at + len + 8].try_into().unwrap());
        let computed = fnv1a64(payload);
        if stored != computed {
            return Err(Error::MalformedSection {
                context: CTX,
                detail: format!(
                    "section {kind} hash mismatch: stored {stored:#018x}, computed {computed:#018x}"
                ),
            });
        }
        sections.push((kind, payload));
        at += len + 8;
    }
    if at != bytes.len() {
        return Err(Error::MalformedSection {
            context: CTX,
            detail: format!("{} trailing bytes", bytes.len() - at),
        });
    }

    let find = |kind: u8| sections.iter().find(|(k, _)| *k == kind).map(|(_, p)| *p);
    let config_text = find(SECTION_CONFIG).ok_or(Error::MalformedSection {
        context: CTX,
        detail: "missing config section".into(),
    })?;
    let cfg =
        QuantizerConfig::from_canonical_text(std::str::from_utf8(config_text).map_err(|_| {
            Error::MalformedSection {
                context: CTX,
                detail: "config section is not UTF-8".into(),
            }
        })?)?;
    let content_cb =
        Codebook::from_bytes(find(SECTION_CONTENT).ok_or(Error::MalformedSection {
            context: CTX,
            detail: "missing content codebook section".into(),
        })?)?;

    let projector = {
        let payload = find(SECTION_PROJECTOR).ok_or(Error::MalformedSection {
            context: CTX,
            detail: "missing projector section".into(),
        })?;
        let mut c = Cursor {
            bytes: payload,
            at: 0,
            context: CTX,
        };
        let out_dim = c.u32()? as usize;
        let in_dim = c.u32()? as usize;
        let explained = c.f64()?;
        let rows: Vec<T> = c.f32s(out_dim.checked_mul(in_dim).ok_or(Error::DimOverflow {
            context: CTX,
            detail: "projector dims overflow".into(),
        })?)?;
        c.done()?;
        ProsodyProjector::from_rows(rows, out_dim, in_dim, explained)?
    };

    let prosody_stack = match find(SECTION_PROSODY) {
        None => None,
        Some(payload) => {
            let mut c = Cursor {
                bytes: payload,
                at: 0,
                context: CTX,
            };
            let count = c.u16()? as usize;
            let mut stack = Vec::with_capacity(count);
            for _ in 0..count {
                stack.push(read_length_prefixed_codebook::<T>(&mut c)?);
            }
            c.done()?;
            Some(stack)
        }
    };

    let speaker_grvq = match find(SECTION_SPEAKER) {
        None => None,
        Some(payload) => {
            let mut c = Cursor {
                bytes: payload,
                at: 0,
                context: CTX,
            };
            let groups = c.u16()? as usize;
            let layers = c.u16()? as usize;
            let group_width = c.u32()? as usize;
            let lookup_dim = c.u32()? as usize;
            let mut codebooks = Vec::with_capacity(groups);
            for _ in 0..groups {
                let mut row = Vec::with_capacity(layers);
                for _ in 0..layers {
                    row.push(read_length_prefixed_codebook::<T>(&mut c)?);
                }
                codebooks.push(row);
            }
            let mut projections = Vec::with_capacity(groups);
            for _ in 0..groups {
                let mut row = Vec::with_capacity(layers);
                for _ in 0..layers {
                    row.push(c.f32s::<T>(lookup_dim * group_width)?);
                }
                projections.push(row);
            }
            c.done()?;
            Some(GrvqStack::new(codebooks, projections, group_width)?)
        }
    };

    let film = match find(SECTION_FILM) {
        None => None,
        Some(payload) => {
            let mut c = Cursor {
                bytes: payload,
                at: 0,
                context: CTX,
            };
            let m = c.u32()? as usize;
            let s = c.u32()? as usize;
            let d = c.u32()? as usize;
            let mse = c.f64()?;
            let scale_weight = c.f32s::<T>(m * s)?;
            let scale_bias = c.f32s::<T>(m)?;
            let shift_weight = c.f32s::<T>(m * s)?;
            let shift_bias = c.f32s::<T>(m)?;
            let readout = c.f32s::<T>(d * m)?;
            c.done()?;
            Some(FilmReadout {
                film: FilmParams {
                    scale_weight,
                    scale_bias,
                    shift_weight,
                    shift_bias,
                    out_dim: m,
                    s_dim: s,
                },
                readout,
                target_dim: d,
                mse,
            })
        }
    };

    FittedPipeline::from_parts(
        cfg,
        content_cb,
        projector,
        prosody_stack,
        speaker_grvq,
        film,
    )
}

pub fn write_pipeline_file<T: Scalar>(path: impl AsRef<Path>, p: &FittedPipeline<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, pipeline_to_bytes(p)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_pipeline_file<T: Scalar>(path: impl AsRef<Path>) -> Result<FittedPipeline<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    pipeline_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic, SyntheticSpec};
    use crate::pipeline::{fit_pipeline, Variant};

    fn fitted(
        variant: Variant,
    ) -> (
        FittedPipeline<f64>,
        Vec<crate::features::FeatureMatrix<f64>>,
    ) {
        let spec = SyntheticSpec {
            n_speakers: 5,
            n_contents: 8,
            speaker_offset_scale: 0.8,
            speaker_gain_spread: 0.2,
            prosody_dim: 4,
            prosody_smoothness: 0.9,
            noise_std: 0.02,
            seed: 21,
        };
        let corpus = generate_synthetic::<f64>(&spec, 32, 50.0, 20, 60).unwrap();
        let cb = Codebook::from_rows(corpus.content_centroids.clone(), false, "content").unwrap();
        let training: Vec<_> = corpus
            .utterances
            .iter()
            .map(|u| u.features.clone())
            .collect();
        let mut cfg = QuantizerConfig::desk_small().with_variant(variant);
        cfg.content_codebook_size = 8;
        (fit_pipeline(&training, &cfg, cb, 9).unwrap(), training)
    }

    #[test]
    fn archive_round_trip_reproduces_encode_exactly() {
        for variant in [Variant::Skq3Sigma, Variant::SkqSigma, Variant::Skq] {
            let (p, training) = fitted(variant);
            let bytes = pipeline_to_bytes(&p);
            let q: FittedPipeline<f64> = pipeline_from_bytes(&bytes).unwrap();
            assert_eq!(q.config(), p.config());
            assert_eq!(q.content_codebook().hash(), p.content_codebook().hash());
            for w in training.iter().take(3) {
                let a = p.encode(w).unwrap();
                let b = q.encode(w).unwrap();
                assert_eq!(a, b, "variant {variant}");
                let da = p.decode(&a).unwrap();
                let db = q.decode(&b).unwrap();
                assert_eq!(da.data(), db.data());
            }
        }
    }

    #[test]
    fn archive_preserves_film_section() {
        let (mut p, training) = fitted(Variant::SkqSigma);
        let film = p
            .fit_film_readout(
                &training[..6],
                &crate::film::FilmFitOptions {
                    max_rounds: 2,
                    ..Default::default()
                },
            )
            .unwrap();
        p.set_film(Some(film));
        let bytes = pipeline_to_bytes(&p);
        let q: FittedPipeline<f64> = pipeline_from_bytes(&bytes).unwrap();
        let fp = p.film().unwrap();
        let fq = q.film().unwrap();
        assert_eq!(fq.target_dim, fp.target_dim);
        assert_eq!(fq.mse, fp.mse);
        // Parameters survive at f32 precision.
        for (a, b) in fp.readout.iter().zip(&fq.readout) {
            assert!((a - b).abs() <= a.abs() * 1e-6 + 1e-7);
        }
    }

    #[test]
    fn archive_rejects_corruption() {
        let (p, _) = fitted(Variant::Skq3Sigma);
        let bytes = pipeline_to_bytes(&p);
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            pipeline_from_bytes::<f64>(&bad_magic),
            Err(Error::BadMagic { .. })
        ));
        // Flip one byte inside the first section payload.
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(pipeline_from_bytes::<f64>(&flipped).is_err());
        assert!(pipeline_from_bytes::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}

//! Code-domain editing: one-shot voice conversion by speaker-stream swap,
//! and prosody flattening.
//!
//! Both operations work purely on [`DisentangledCodes`] and are closed over
//! valid code sets: content indices are never touched, and the speaker and
//! prosody streams are replaced wholesale in whatever representation the
//! variant uses (quantized indices or continuous vectors).

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::pipeline::{DisentangledCodes, ProsodyCodes};
use crate::scalar::Scalar;

/// Replaces the source's speaker stream with the reference's.
///
/// Content and prosody streams are carried over bit-identically. Both code
/// sets must come from the same config (hash and variant).
pub fn swap_speaker<T: Scalar>(
    source: &DisentangledCodes<T>,
    reference: &DisentangledCodes<T>,
) -> Result<DisentangledCodes<T>> {
    if source.config_hash != reference.config_hash {
        return Err(Error::ConfigMismatch(format!(
            "source config {:#018x} vs reference config {:#018x}",
            source.config_hash, reference.config_hash
        )));
    }
    if source.variant != reference.variant {
        return Err(Error::ConfigMismatch(format!(
            "source variant {} vs reference variant {}",
            source.variant, reference.variant
        )));
    }
    Ok(DisentangledCodes {
        speaker: reference.speaker.clone(),
        ..source.clone()
    })
}

/// Replaces the prosody codes of all frames at or after `from_frame` with
/// the codes at `hold_frame`, per layer (or per continuous column).
///
/// `from_frame == n_frames` is a no-op; the midpoint-flattening case is
/// `from_frame == hold_frame == n_frames / 2`.
pub fn flatten_prosody<T: Scalar>(
    codes: &DisentangledCodes<T>,
    from_frame: usize,
    hold_frame: usize,
) -> Result<DisentangledCodes<T>> {
    let t = codes.n_frames;
    if hold_frame >= t {
        return Err(Error::FrameOutOfRange {
            frame: hold_frame,
            frames: t,
        });
    }
    if from_frame > t {
        return Err(Error::FrameOutOfRange {
            frame: from_frame,
            frames: t,
        });
    }
    let prosody = match &codes.prosody {
        ProsodyCodes::Quantized(layers) => {
            let mut out = layers.clone();
            for layer in out.iter_mut() {
                let held = layer[hold_frame];
                for v in layer.iter_mut().skip(from_frame) {
                    *v = held;
                }
            }
            ProsodyCodes::Quantized(out)
        }
        ProsodyCodes::Continuous(m) => {
            let d = m.dim();
            let mut data = m.data().to_vec();
            let held: Vec<T> = m.frame(hold_frame).to_vec();
            for f in from_frame..t {
                data[f * d..(f + 1) * d].copy_from_slice(&held);
            }
            ProsodyCodes::Continuous(FeatureMatrix::from_raw(data, t, d, m.frame_rate_hz()))
        }
    };
    Ok(DisentangledCodes {
        prosody,
        ..codes.clone()
    })
}

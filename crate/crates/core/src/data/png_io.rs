//! PNG frame-directory I/O. Frames are 8-bit RGB files named
//! `frame_%06d.png`, numbered contiguously from zero.

use super::FrameSequence;
use crate::error::{CtunError, Result};
use crate::tensor::{Shape, Tensor};
use image::{ImageBuffer, Rgb, RgbImage};
use std::fs;
use std::path::Path;

fn frame_index_from_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn tensor_from_rgb(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shape = Shape::new(1, 3, h, w);
    let mut data = vec![0.0f32; shape.count()];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[shape.index(0, c, y as usize, x as usize)] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(data, shape)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Load `frame_%06d.png` files from `dir` in index order. Values are scaled
/// to [0,1]; a gap in the numbering is an error naming the first missing
/// index.
pub fn load_sequence(dir: &Path) -> Result<FrameSequence<f32>> {
    let mut indices: Vec<usize> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(idx) = entry.file_name().to_str().and_then(frame_index_from_name) {
            indices.push(idx);
        }
    }
    if indices.is_empty() {
        return Err(CtunError::NoFrames {
            dir: dir.display().to_string(),
        });
    }
    indices.sort_unstable();
    for (want, &got) in indices.iter().enumerate() {
        if got != want {
            return Err(CtunError::MissingFrame { index: want });
        }
    }

    let mut frames = Vec::with_capacity(indices.len());
    for idx in 0..indices.len() {
        let path = dir.join(format!("frame_{idx:06}.png"));
        let img = image::open(&path)?.to_rgb8();
        frames.push(tensor_from_rgb(&img));
    }
    let seq = FrameSequence::new(frames, dir.display().to_string())?;
    Ok(seq)
}

/// Write a sequence as `frame_%06d.png` files, quantizing to 8 bits.
pub fn save_sequence(seq: &FrameSequence<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        save_frame_png(frame, &dir.join(format!("frame_{i:06}.png")))?;
    }
    Ok(())
}

/// Write one (1,3,H,W) or (1,1,H,W) tensor as an 8-bit PNG.
pub fn save_frame_png(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = frame.shape();
    let data = frame.data();
    match s.c {
        3 => {
            let img: RgbImage = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
                Rgb([
                    quantize(data[s.index(0, 0, y as usize, x as usize)]),
                    quantize(data[s.index(0, 1, y as usize, x as usize)]),
                    quantize(data[s.index(0, 2, y as usize, x as usize)]),
                ])
            });
            img.save(path)?;
        }
        1 => {
            let img = image::GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
                image::Luma([quantize(data[s.index(0, 0, y as usize, x as usize)])])
            });
            img.save(path)?;
        }
        c => {
            return Err(CtunError::shape(
                "save_frame_png",
                format!("expected 1 or 3 channels, got {c}"),
            ))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_8bit_sequence(n: usize, h: usize, w: usize, seed: u64) -> FrameSequence<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|_| {
                let data: Vec<f32> = (0..3 * h * w)
                    .map(|_| rng.gen_range(0u32..=255) as f32 / 255.0)
                    .collect();
                Tensor::from_vec(data, Shape::new(1, 3, h, w))
            })
            .collect();
        FrameSequence::new(frames, "random").unwrap()
    }

    #[test]
    fn save_load_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let seq = random_8bit_sequence(3, 12, 9, 42);
        save_sequence(&seq, dir.path()).unwrap();
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn empty_directory_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_sequence(dir.path()),
            Err(CtunError::NoFrames { .. })
        ));
    }

    #[test]
    fn gap_in_numbering_names_first_missing_index() {
        let dir = tempfile::tempdir().unwrap();
        let seq = random_8bit_sequence(4, 4, 4, 7);
        save_sequence(&seq, dir.path()).unwrap();
        fs::remove_file(dir.path().join("frame_000002.png")).unwrap();
        match load_sequence(dir.path()) {
            Err(CtunError::MissingFrame { index }) => assert_eq!(index, 2),
            other => panic!("expected MissingFrame, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_frame_png(
            &Tensor::from_vec(vec![0.5; 3 * 4 * 4], Shape::new(1, 3, 4, 4)),
            &dir.path().join("frame_000000.png"),
        )
        .unwrap();
        save_frame_png(
            &Tensor::from_vec(vec![0.5; 3 * 5 * 4], Shape::new(1, 3, 5, 4)),
            &dir.path().join("frame_000001.png"),
        )
        .unwrap();
        assert!(matches!(
            load_sequence(dir.path()),
            Err(CtunError::FrameSize { .. })
        ));
    }
}

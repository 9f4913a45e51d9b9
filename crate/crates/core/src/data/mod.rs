//! Dataset input and output: KITTI-format labels and calibration, PGM
//! instance masks, and the synthetic scene generator.
//!
//! On-disk layout of a split rooted at `root`:
//!
//! ```text
//! root/label_2/{frame}.txt
//! root/calib/{frame}.txt
//! root/masks/{frame}/*.pgm + index.json
//! root/image_2/{frame}.ppm        (synthetic scenes only)
//! ```

pub mod kitti;
pub mod masks;
pub mod synth;

pub use kitti::{parse_calib, parse_label_file, write_calib, write_label_file, KittiLabel, DONT_CARE};
pub use masks::{
    decode_pgm, encode_pgm, load_instance_masks, read_pgm, write_instance_masks, write_pgm, GrayImage, MASK_INDEX,
};
pub use synth::{
    generate_scene, generate_suite, occlusion_fixture, SceneConfig, SceneObject, SyntheticScene, CAMERA_HEIGHT,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;

pub const LABEL_DIR: &str = "label_2";
pub const CALIB_DIR: &str = "calib";
pub const MASK_DIR: &str = "masks";
pub const IMAGE_DIR: &str = "image_2";

pub fn frame_name(index: usize) -> String {
    format!("{index:06}")
}

/// Sorted frame names (file stems) of the `.txt` files in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Input(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Parses a label file, attaching the file name to parse errors.
pub fn read_label_file(path: &Path) -> Result<Vec<KittiLabel>> {
    parse_label_file(&read_text(path)?).map_err(|e| e.in_file(&path.display().to_string()))
}

pub fn read_calib(path: &Path) -> Result<CameraIntrinsics> {
    parse_calib(&read_text(path)?).map_err(|e| e.in_file(&path.display().to_string()))
}

/// Binary PPM (`P6`) encoding of an `[h, w, 3]` image with values in `[0, 1]`.
pub fn encode_ppm(image: &crate::tensor::Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = image.hwc()?;
    if c != 3 {
        return Err(Error::dim("encode_ppm", image.shape(), &[h, w, 3]));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Writes labels, calibration, masks and image of one synthetic scene.
pub fn write_scene(root: &Path, frame: &str, scene: &SyntheticScene) -> Result<Vec<PathBuf>> {
    for d in [LABEL_DIR, CALIB_DIR, MASK_DIR, IMAGE_DIR] {
        std::fs::create_dir_all(root.join(d))?;
    }
    let label = root.join(LABEL_DIR).join(format!("{frame}.txt"));
    std::fs::write(&label, write_label_file(&scene.labels()))?;
    let calib = root.join(CALIB_DIR).join(format!("{frame}.txt"));
    std::fs::write(&calib, write_calib(&scene.intrinsics))?;
    let masks: Vec<_> = scene.objects.iter().map(|o| Some(o.visible_mask.clone())).collect();
    let mask_dir = root.join(MASK_DIR).join(frame);
    write_instance_masks(&mask_dir, &masks, scene.width, scene.height)?;
    let image = root.join(IMAGE_DIR).join(format!("{frame}.ppm"));
    std::fs::write(&image, encode_ppm(&scene.image)?)?;
    Ok(vec![label, calib, mask_dir, image])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        write_scene(dir.path(), &frame_name(7), &scene).unwrap();
        assert_eq!(list_frames(&dir.path().join(LABEL_DIR)).unwrap(), vec!["000007"]);
        let labels = read_label_file(&dir.path().join(LABEL_DIR).join("000007.txt")).unwrap();
        assert_eq!(labels.len(), scene.objects.len());
        let k = read_calib(&dir.path().join(CALIB_DIR).join("000007.txt")).unwrap();
        assert_eq!(k, scene.intrinsics);
        let masks =
            load_instance_masks(&dir.path().join(MASK_DIR).join("000007"), labels.len(), scene.width, scene.height)
                .unwrap();
        for (m, o) in masks.iter().zip(&scene.objects) {
            assert_eq!(m.as_ref().unwrap(), &o.visible_mask);
        }
    }

    #[test]
    fn parse_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("000001.txt");
        std::fs::write(&p, "Car 1 2").unwrap();
        let msg = read_label_file(&p).unwrap_err().to_string();
        assert!(msg.contains("000001.txt") && msg.contains("line 1"), "{msg}");
    }
}

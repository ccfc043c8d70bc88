use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{ArrayD, Axis, IxDyn};

use super::Dataset;
use crate::error::{invalid, Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Loads `dir/<class>/*.png`; classes are the sorted subfolder names and
/// pixel values are scaled to `[0, 1]`. `channels` is 1 or 3.
pub fn load_image_folder(dir: &Path, channels: usize) -> Result<Dataset> {
    if channels != 1 && channels != 3 {
        return Err(invalid!("image folders decode to 1 or 3 channels, not {channels}"));
    }
    let classes: Vec<_> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::format(dir, "no class subfolders"));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut size = None;
    for (label, class_dir) in classes.iter().enumerate() {
        for file in sorted_entries(class_dir)? {
            if file.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() != Some("png") {
                continue;
            }
            let img = image::open(&file).map_err(|e| Error::format(&file, e.to_string()))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            match size {
                None => size = Some((h, w)),
                Some(s) if s != (h, w) => {
                    return Err(Error::format(&file, format!("image is {h}x{w}, expected {}x{}", s.0, s.1)));
                }
                _ => {}
            }
            let data: Vec<f64> = if channels == 3 {
                img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
            } else {
                img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
            };
            // decoded pixels are HWC; samples are CHW
            let hwc = ArrayD::from_shape_vec(IxDyn(&[h, w, channels]), data).expect("decoded size");
            images.push(hwc.permuted_axes(IxDyn(&[2, 0, 1])).as_standard_layout().into_owned());
            labels.push(label);
        }
    }
    let (h, w) = size.ok_or_else(|| Error::format(dir, "no png images found"))?;
    let mut inputs = ArrayD::zeros(IxDyn(&[images.len(), channels, h, w]));
    for (i, img) in images.iter().enumerate() {
        inputs.index_axis_mut(Axis(0), i).assign(img);
    }
    Dataset::new(inputs, labels, classes.len())
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Converts the CIFAR-10 binary batches in `src` into `dst/train/<class>`
/// and `dst/test/<class>` PNG folders. Returns (train, test) image counts.
pub fn convert_cifar10(src: &Path, dst: &Path) -> Result<(usize, usize)> {
    let names: Vec<String> = match fs::read_to_string(src.join("batches.meta.txt")) {
        Ok(text) => text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        Err(_) => (0..10).map(|i| i.to_string()).collect(),
    };
    if names.len() != 10 {
        return Err(Error::format(src.join("batches.meta.txt"), "expected 10 class names"));
    }
    let mut counts = (0, 0);
    let train_files: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    for (split, files) in [("train", train_files), ("test", vec!["test_batch.bin".to_string()])] {
        let mut n = 0;
        for name in files {
            let path = src.join(&name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() % CIFAR_RECORD != 0 {
                return Err(Error::format(&path, "size is not a multiple of the record length"));
            }
            for rec in bytes.chunks_exact(CIFAR_RECORD) {
                let label = rec[0] as usize;
                if label >= 10 {
                    return Err(Error::format(&path, format!("label {label} out of range")));
                }
                let plane = 32 * 32;
                let img = RgbImage::from_fn(32, 32, |x, y| {
                    let p = (y * 32 + x) as usize;
                    image::Rgb([rec[1 + p], rec[1 + plane + p], rec[1 + 2 * plane + p]])
                });
                let dir = dst.join(split).join(&names[label]);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let out = dir.join(format!("{n:05}.png"));
                img.save(&out).map_err(|e| Error::format(&out, e.to_string()))?;
                n += 1;
            }
        }
        if split == "train" {
            counts.0 = n;
        } else {
            counts.1 = n;
        }
    }
    Ok(counts)
}

/// Writes a grayscale or RGB sample (`[C, H, W]` in `[0, 1]`) as PNG.
pub fn save_png(sample: &ndarray::ArrayViewD<f64>, path: &Path) -> Result<()> {
    let (c, h, w) = (sample.shape()[0], sample.shape()[1] as u32, sample.shape()[2] as u32);
    let px = |k: usize, x: u32, y: u32| (sample[[k, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
    let res = if c == 1 {
        GrayImage::from_fn(w, h, |x, y| image::Luma([px(0, x, y)])).save(path)
    } else {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([px(0, x, y), px(1, x, y), px(2, x, y)])).save(path)
    };
    res.map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut expected = Vec::new();
        for (class, value) in [("cat", 10u8), ("dog", 200u8)] {
            let d = dir.path().join(class);
            fs::create_dir_all(&d).unwrap();
            for i in 0..3u8 {
                let img = RgbImage::from_fn(4, 5, |x, y| image::Rgb([value, (x * 10) as u8 + i, (y * 20) as u8]));
                img.save(d.join(format!("{i}.png"))).unwrap();
                expected.push(img);
            }
        }
        fs::write(dir.path().join("cat").join("notes.txt"), "ignored").unwrap();
        let ds = load_image_folder(dir.path(), 3).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.classes(), 2);
        assert_eq!(ds.sample_shape(), &[3, 5, 4]);
        assert_eq!(ds.labels(), &[0, 0, 0, 1, 1, 1]);
        for (i, img) in expected.iter().enumerate() {
            for (x, y, p) in img.enumerate_pixels() {
                for k in 0..3 {
                    let v = ds.inputs()[[i, k, y as usize, x as usize]];
                    assert_eq!((v * 255.0).round() as u8, p[k]);
                }
            }
        }
    }

    #[test]
    fn cifar_conversion_layout() {
        let src = tempfile::tempdir().unwrap();
        let dst = tempfile::tempdir().unwrap();
        let mut record = vec![0u8; CIFAR_RECORD];
        for name in (1..=5).map(|i| format!("data_batch_{i}.bin")).chain(["test_batch.bin".into()]) {
            let mut bytes = Vec::new();
            for label in [3u8, 7u8] {
                record[0] = label;
                record[1] = 255; // red channel of pixel (0, 0)
                bytes.extend_from_slice(&record);
            }
            fs::write(src.path().join(name), bytes).unwrap();
        }
        let (tr, te) = convert_cifar10(src.path(), dst.path()).unwrap();
        assert_eq!((tr, te), (10, 2));
        let ds = load_image_folder(&dst.path().join("train"), 3).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.classes(), 2);
        assert_eq!(ds.inputs()[[0, 0, 0, 0]], 1.0);
        assert_eq!(ds.inputs()[[0, 1, 0, 0]], 0.0);
    }

    #[test]
    fn save_png_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let sample = ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[3, 2, 3]), |ix| (ix[0] * 6 + ix[1] * 3 + ix[2]) as f64 / 17.0);
        let d = dir.path().join("only");
        fs::create_dir_all(&d).unwrap();
        save_png(&sample.view(), &d.join("x.png")).unwrap();
        let ds = load_image_folder(dir.path(), 3).unwrap();
        for (a, b) in ds.inputs().iter().zip(sample.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn missing_or_mixed_sizes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_folder(dir.path(), 3).is_err());
        let d = dir.path().join("a");
        fs::create_dir_all(&d).unwrap();
        RgbImage::new(4, 4).save(d.join("0.png")).unwrap();
        RgbImage::new(5, 4).save(d.join("1.png")).unwrap();
        assert!(matches!(load_image_folder(dir.path(), 3), Err(Error::Format { .. })));
        assert!(load_image_folder(dir.path(), 2).is_err());
    }
}

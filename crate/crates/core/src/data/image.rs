use std::path::Path;

use image::imageops::FilterType;
use image::{ImageReader, RgbImage};

use crate::error::{ensure, shape_err, Error, Result};
use crate::model::IMAGE_CHANNELS;
use crate::tensor::{Scalar, Tensor};

/// Decodes a PNG or JPEG, resizes it bilinearly to `(height, width)` when
/// needed, and returns `[3, height, width]` with values `byte / 255`.
pub fn load_image(path: &Path, (height, width): (usize, usize)) -> Result<Tensor<f32>> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_owned(),
        message,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let mut rgb = reader.decode().map_err(|e| decode_err(e.to_string()))?.to_rgb8();
    if (rgb.height() as usize, rgb.width() as usize) != (height, width) {
        rgb = image::imageops::resize(&rgb, width as u32, height as u32, FilterType::Triangle);
    }
    let plane = height * width;
    let mut data = vec![0f32; IMAGE_CHANNELS * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..IMAGE_CHANNELS {
            data[c * plane + i] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::from_vec(&[IMAGE_CHANNELS, height, width], data)
}

fn to_rgb<T: Scalar>(t: &Tensor<T>) -> Result<RgbImage> {
    ensure!(
        t.rank() == 3 && t.shape()[0] == IMAGE_CHANNELS,
        shape_err!("image must be [3, H, W], got {:?}", t.shape())
    );
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let plane = h * w;
    let data = t.data();
    if let Some(bad) = data.iter().find(|v| !(v.f64() >= 0.0 && v.f64() <= 1.0)) {
        return Err(Error::Contract(format!("pixel value {bad} outside [0, 1]")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for c in 0..IMAGE_CHANNELS {
            px[c] = (data[c * plane + i].f64() * 255.0).round() as u8;
        }
    }
    Ok(img)
}

/// Writes `[3, H, W]` values in `[0, 1]` as an 8-bit RGB PNG, mapping
/// `v` to `round(v * 255)`.
pub fn save_image<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let img = to_rgb(t)?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_owned(),
            message: other.to_string(),
        },
    })
}

/// Places equally sized `[3, H, W]` images left to right, separated by
/// `gap` white columns.
pub fn tile_images<T: Scalar>(images: &[Tensor<T>], gap: usize) -> Result<Tensor<T>> {
    ensure!(!images.is_empty(), Error::Contract("nothing to tile".into()));
    let shape = images[0].shape().to_vec();
    ensure!(
        shape.len() == 3 && shape[0] == IMAGE_CHANNELS,
        shape_err!("image must be [3, H, W], got {shape:?}")
    );
    ensure!(
        images.iter().all(|t| t.shape() == shape.as_slice()),
        shape_err!("tiled images must share one shape")
    );
    let (h, w) = (shape[1], shape[2]);
    let n = images.len();
    let total_w = n * w + (n - 1) * gap;
    let mut out = Tensor::full(&[IMAGE_CHANNELS, h, total_w], T::one())?;
    let dst = out.data_mut();
    for (k, img) in images.iter().enumerate() {
        let x0 = k * (w + gap);
        for c in 0..IMAGE_CHANNELS {
            for y in 0..h {
                let src = &img.data()[(c * h + y) * w..][..w];
                dst[(c * h + y) * total_w + x0..][..w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_red_loads_as_unit_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        RgbImage::from_pixel(100, 100, image::Rgb([255, 0, 0])).save(&p).unwrap();
        let t = load_image(&p, (100, 100)).unwrap();
        assert_eq!(t.shape(), &[3, 100, 100]);
        assert!(t.data()[..10_000].iter().all(|&v| v == 1.0));
        assert!(t.data()[10_000..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn larger_images_are_resized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.png");
        RgbImage::from_pixel(200, 200, image::Rgb([10, 20, 30])).save(&p).unwrap();
        let t = load_image(&p, (100, 100)).unwrap();
        assert_eq!(t.shape(), &[3, 100, 100]);
        assert!((t.data()[0] - 10.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn half_grey_saves_as_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_image(&Tensor::full(&[3, 4, 4], 0.5f64).unwrap(), &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert!(img.pixels().all(|px| px.0 == [128, 128, 128]));
    }

    #[test]
    fn out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let t = Tensor::full(&[3, 2, 2], 1.01f32).unwrap();
        assert!(matches!(save_image(&t, &p), Err(Error::Contract(_))));
        assert!(!p.exists());
    }

    #[test]
    fn corrupt_file_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        assert!(matches!(load_image(&p, (4, 4)), Err(Error::Decode { .. })));
    }

    #[test]
    fn tiling_places_images_side_by_side() {
        let a = Tensor::full(&[3, 2, 2], 0.0f32).unwrap();
        let b = Tensor::full(&[3, 2, 2], 0.5f32).unwrap();
        let t = tile_images(&[a, b], 1).unwrap();
        assert_eq!(t.shape(), &[3, 2, 5]);
        assert_eq!(&t.data()[..5], &[0.0, 0.0, 1.0, 0.5, 0.5]);
    }
}

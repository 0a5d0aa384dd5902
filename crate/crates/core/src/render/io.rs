use std::path::Path;

use super::LatentImage;
use crate::container::{Container, Section};
use crate::deform::SpaceKind;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = *b"AVIM";
pub const IMAGE_VERSION: u32 = 1;

/// Preview decode without a bridge: latent channels 0–2 mapped affinely from
/// [-1, 1] to [0, 255].
pub fn mock_decode_rgb(img: &LatentImage) -> Vec<u8> {
    img.features
        .chunks_exact(4)
        .flat_map(|c| [c[0], c[1], c[2]].map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8))
        .collect()
}

pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_image_data(rgb).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

pub fn write_preview_png(img: &LatentImage, path: &Path) -> Result<()> {
    write_png(path, img.width, img.height, &mock_decode_rgb(img))
}

/// Raw dump: f32 `[H, W, 4]` features and `[H, W]` opacity.
pub fn write_avim(img: &LatentImage, path: &Path) -> Result<()> {
    let mut c = Container::new(IMAGE_MAGIC, IMAGE_VERSION);
    c.push(Section::f32_from_f64("features", &[img.height, img.width, 4], &img.features));
    c.push(Section::f32_from_f64("opacity", &[img.height, img.width], &img.opacity));
    c.push(Section::bytes(
        "space",
        match img.space {
            SpaceKind::Canonical => b"canonical".to_vec(),
            SpaceKind::Observation => b"observation".to_vec(),
        },
    ));
    c.write(path)
}

pub fn read_avim(path: &Path) -> Result<LatentImage> {
    let c = Container::read(path, IMAGE_MAGIC)?;
    let (shape, f) = c.f32_section("features", &[None, None, Some(4)])?;
    let (h, w) = (shape[0], shape[1]);
    let (_, o) = c.f32_section("opacity", &[Some(h), Some(w)])?;
    let space = match c.bytes_section("space")? {
        b"canonical" => SpaceKind::Canonical,
        b"observation" => SpaceKind::Observation,
        _ => return Err(Error::malformed("image", "unknown space tag")),
    };
    Ok(LatentImage {
        width: w,
        height: h,
        features: f.iter().map(|&v| v as f64).collect(),
        opacity: o.iter().map(|&v| v as f64).collect(),
        space,
    })
}

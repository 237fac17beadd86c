use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::ProjectedImage;
use crate::error::{Error, Result};

/// Writes an 8-bit RGB PNG.
pub fn save_png(image: &ProjectedImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let data: Vec<u8> = image
        .pixels
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let to_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&data).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}

/// Reads an 8-bit RGB PNG back into `[0,1]` pixels.
pub fn load_png(path: impl AsRef<Path>) -> Result<ProjectedImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let to_err = |e: png::DecodingError| Error::format(path, 0, e.to_string());
    let mut reader = decoder.read_info().map_err(to_err)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(to_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, 0, "expected 8-bit RGB PNG"));
    }
    let pixels = buf[..info.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect();
    ProjectedImage::from_pixels(info.height as usize, info.width as usize, pixels)
}

//! File formats: Gaussian PLY, PFM depth/embedding maps, 8-bit PNG, JSON
//! and the directory layout of generated samples.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::image::{Image, Mask};
use crate::keypoints::{KeypointSet, JOINT_NAMES, NUM_JOINTS};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_error(format: &'static str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        format,
        offset,
        message: message.into(),
    }
}

// ---------------------------------------------------------------- PLY

const PLY_BASE_PROPS: [&str; 14] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity", "r", "g", "b",
];

fn ply_props(feature_dim: usize) -> Vec<String> {
    PLY_BASE_PROPS
        .iter()
        .map(|s| s.to_string())
        .chain((0..feature_dim).map(|i| format!("feat_{i}")))
        .collect()
}

/// Binary little-endian PLY with raw parameters as `float` properties.
pub fn encode_ply(set: &GaussianSet) -> Vec<u8> {
    let f = set.feature_dim();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment hfg_feature_dim {f}\nelement vertex {}\n",
        set.len()
    );
    for p in ply_props(f) {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for i in 0..set.len() {
        let row = set.positions[i * 3..i * 3 + 3]
            .iter()
            .chain(&set.rotations[i * 4..i * 4 + 4])
            .chain(&set.scales[i * 3..i * 3 + 3])
            .chain(std::iter::once(&set.opacities[i]))
            .chain(&set.colors[i * 3..i * 3 + 3])
            .chain(&set.features[i * f..(i + 1) * f]);
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_ply(bytes: &[u8]) -> Result<GaussianSet> {
    const FMT: &str = "ply";
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| parse_error(FMT, 0, "missing end_header"))?;
    let body_start = end + 11;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| parse_error(FMT, e.valid_up_to(), "header is not UTF-8"))?;

    let mut offset = 0;
    let mut feature_dim = None;
    let mut count = None;
    let mut props = Vec::new();
    for (ln, line) in header.split('\n').enumerate() {
        let at = offset;
        offset += line.len() + 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        match (ln, words.as_slice()) {
            (0, ["ply"]) => {}
            (0, _) => return Err(parse_error(FMT, at, "bad magic, expected \"ply\"")),
            (_, ["format", "binary_little_endian", "1.0"]) => {}
            (_, ["format", ..]) => return Err(parse_error(FMT, at, format!("unsupported format line {line:?}"))),
            (_, ["comment", "hfg_feature_dim", n]) => {
                feature_dim = Some(n.parse::<usize>().map_err(|_| parse_error(FMT, at, "bad feature dimension"))?)
            }
            (_, ["comment", ..]) | (_, []) => {}
            (_, ["element", "vertex", n]) => {
                count = Some(n.parse::<usize>().map_err(|_| parse_error(FMT, at, "bad vertex count"))?)
            }
            (_, ["property", "float", name]) => props.push((at, name.to_string())),
            _ => return Err(parse_error(FMT, at, format!("unexpected header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| parse_error(FMT, 0, "missing vertex element"))?;
    let f = feature_dim.unwrap_or(props.len().saturating_sub(PLY_BASE_PROPS.len()));
    let expected = ply_props(f);
    if props.len() != expected.len() {
        return Err(parse_error(FMT, end, format!("{} properties, expected {}", props.len(), expected.len())));
    }
    for ((at, name), want) in props.iter().zip(&expected) {
        if name != want {
            return Err(parse_error(FMT, *at, format!("property {name:?}, expected {want:?}")));
        }
    }
    let stride = expected.len();
    let need = count * stride * 4;
    if bytes.len() - body_start != need {
        return Err(parse_error(
            FMT,
            body_start + need.min(bytes.len() - body_start),
            format!("vertex data is {} bytes, expected {need}", bytes.len() - body_start),
        ));
    }
    let values: Vec<f64> = bytes[body_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut set = GaussianSet::zeros(count, f);
    for (i, row) in values.chunks_exact(stride).enumerate() {
        set.positions[i * 3..i * 3 + 3].copy_from_slice(&row[0..3]);
        set.rotations[i * 4..i * 4 + 4].copy_from_slice(&row[3..7]);
        set.scales[i * 3..i * 3 + 3].copy_from_slice(&row[7..10]);
        set.opacities[i] = row[10];
        set.colors[i * 3..i * 3 + 3].copy_from_slice(&row[11..14]);
        set.features[i * f..(i + 1) * f].copy_from_slice(&row[14..]);
    }
    Ok(set)
}

pub fn write_ply(path: &Path, set: &GaussianSet) -> Result<()> {
    write_file(path, &encode_ply(set))
}

pub fn read_ply(path: &Path) -> Result<GaussianSet> {
    decode_ply(&read_file(path)?)
}

// ---------------------------------------------------------------- PFM

/// Little-endian PFM (`Pf` for one channel, `PF` for three), rows stored
/// bottom to top.
pub fn encode_pfm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Shape(format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    let row = image.width * image.channels;
    for y in (0..image.height).rev() {
        for &v in &image.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    const FMT: &str = "pfm";
    let mut pos = 0;
    let mut token = |what: &str| -> Result<(usize, String)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_error(FMT, start, format!("missing {what}")));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()))
    };
    let (at, magic) = token("magic")?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(parse_error(FMT, at, format!("bad magic {magic:?}"))),
    };
    let (at, w) = token("width")?;
    let width: usize = w.parse().map_err(|_| parse_error(FMT, at, "bad width"))?;
    let (at, h) = token("height")?;
    let height: usize = h.parse().map_err(|_| parse_error(FMT, at, "bad height"))?;
    let (at, s) = token("scale")?;
    let scale: f64 = s.parse().map_err(|_| parse_error(FMT, at, "bad scale"))?;
    // Exactly one whitespace byte separates the header from the data.
    let start = pos + 1;
    let need = width * height * channels * 4;
    if bytes.len() < start || bytes.len() - start != need {
        return Err(parse_error(FMT, start.min(bytes.len()), format!("expected {need} bytes of pixel data")));
    }
    let little = scale < 0.0;
    let vals: Vec<f64> = bytes[start..]
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().unwrap();
            (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let row = width * channels;
    let mut data = vec![0.0; vals.len()];
    for y in 0..height {
        let src = (height - 1 - y) * row;
        data[y * row..(y + 1) * row].copy_from_slice(&vals[src..src + row]);
    }
    Image::from_data(width, height, channels, data)
}

pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    write_file(path, &encode_pfm(image)?)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    decode_pfm(&read_file(path)?)
}

/// Channel planes of `image` stacked top to bottom in one single-channel
/// image of height `height * channels`.
pub fn stack_planes(image: &Image) -> Image {
    let (w, h, c) = (image.width, image.height, image.channels);
    let mut data = Vec::with_capacity(w * h * c);
    for ch in 0..c {
        data.extend(image.data.iter().skip(ch).step_by(c.max(1)));
    }
    Image::from_data(w, h * c, 1, data).expect("plane stack has matching size")
}

/// Inverse of [`stack_planes`].
pub fn unstack_planes(stacked: &Image, channels: usize) -> Result<Image> {
    if stacked.channels != 1 || channels == 0 || stacked.height % channels != 0 {
        return Err(Error::Shape(format!(
            "{}x{}x{} image is not a stack of {channels} planes",
            stacked.width, stacked.height, stacked.channels
        )));
    }
    let plane = stacked.width * (stacked.height / channels);
    let mut data = vec![0.0; stacked.data.len()];
    for (ch, src) in stacked.data.chunks_exact(plane).enumerate() {
        for (i, &v) in src.iter().enumerate() {
            data[i * channels + ch] = v;
        }
    }
    Image::from_data(stacked.width, stacked.height / channels, channels, data)
}

/// Feature images of any width as a single-channel PFM of stacked planes.
pub fn write_feature_pfm(path: &Path, image: &Image) -> Result<()> {
    write_pfm(path, &stack_planes(image))
}

pub fn read_feature_pfm(path: &Path, channels: usize) -> Result<Image> {
    unstack_planes(&read_pfm(path)?, channels)
}

// ---------------------------------------------------------------- PNG

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit grayscale or RGB PNG; values are clamped to [0, 1].
pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Shape(format!("PNG output holds 1 or 3 channels, not {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        let bytes: Vec<u8> = image.data.iter().map(|&v| to_u8(v)).collect();
        writer.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h * channels].iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_data(w, h, channels, data)
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    write_file(path, &encode_png(image)?)
}

pub fn read_png(path: &Path) -> Result<Image> {
    decode_png(&read_file(path)?)
}

pub fn mask_to_image(mask: &Mask) -> Image {
    Image {
        width: mask.width,
        height: mask.height,
        channels: 1,
        data: mask.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    }
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_png(path, &mask_to_image(mask))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_png(path)?;
    if img.channels != 1 {
        return Err(Error::Shape(format!("mask {} is not grayscale", path.display())));
    }
    Ok(Mask::from_threshold(&img, 0.5))
}

// ---------------------------------------------------------------- JSON

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

#[derive(Serialize, Deserialize)]
struct KeypointFile {
    names: Vec<String>,
    joints: Vec<Vec<f64>>,
}

pub fn keypoints_to_json(kp: &KeypointSet) -> serde_json::Value {
    let file = KeypointFile {
        names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        joints: (0..NUM_JOINTS).map(|j| kp.joint(j).to_vec()).collect(),
    };
    serde_json::to_value(file).expect("keypoints serialize")
}

pub fn keypoints_from_json(value: serde_json::Value) -> Result<KeypointSet> {
    let file: KeypointFile = serde_json::from_value(value)?;
    if file.joints.len() != NUM_JOINTS {
        return Err(Error::Shape(format!("{} joints, expected {NUM_JOINTS}", file.joints.len())));
    }
    let dim = file.joints[0].len();
    if file.joints.iter().any(|j| j.len() != dim) {
        return Err(Error::Shape("joints have mixed dimensions".into()));
    }
    KeypointSet::new(dim, file.joints.concat())
}

pub fn write_keypoints(path: &Path, kp: &KeypointSet) -> Result<()> {
    write_json(path, &keypoints_to_json(kp))
}

pub fn read_keypoints(path: &Path) -> Result<KeypointSet> {
    keypoints_from_json(read_json(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantized_set(n: usize, f: usize) -> GaussianSet {
        let mut set = GaussianSet::zeros(n, f);
        let mut flat = set.to_flat();
        for (i, v) in flat.iter_mut().enumerate() {
            *v = ((i as f64 * 0.731).sin() * 3.0) as f32 as f64;
        }
        set.set_flat(&flat);
        set
    }

    #[test]
    fn ply_round_trip_is_exact() {
        let set = quantized_set(7, 5);
        let bytes = encode_ply(&set);
        assert_eq!(decode_ply(&bytes).unwrap(), set);
        let header = String::from_utf8_lossy(&bytes[..bytes.len() - 7 * 19 * 4]).into_owned();
        assert!(header.contains("comment hfg_feature_dim 5\n"));
        assert!(header.contains("property float feat_4\nend_header\n"));
    }

    #[test]
    fn empty_ply() {
        let set = GaussianSet::empty(8);
        assert_eq!(decode_ply(&encode_ply(&set)).unwrap(), set);
    }

    #[test]
    fn corrupted_ply_magic_names_offset() {
        let mut bytes = encode_ply(&quantized_set(2, 1));
        bytes[0] = b'q';
        match decode_ply(&bytes) {
            Err(Error::Parse { offset, format, .. }) => assert_eq!((format, offset), ("ply", 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_ply() {
        let bytes = encode_ply(&quantized_set(3, 2));
        assert!(matches!(decode_ply(&bytes[..bytes.len() - 2]), Err(Error::Parse { .. })));
    }

    #[test]
    fn pfm_round_trip() {
        for ch in [1, 3] {
            let mut img = Image::new(5, 4, ch);
            for (i, v) in img.data.iter_mut().enumerate() {
                *v = (i as f32 * 0.37) as f64;
            }
            let bytes = encode_pfm(&img).unwrap();
            assert_eq!(decode_pfm(&bytes).unwrap(), img);
        }
    }

    #[test]
    fn pfm_bad_magic() {
        let mut bytes = encode_pfm(&Image::new(2, 2, 1)).unwrap();
        bytes[1] = b'x';
        assert!(matches!(decode_pfm(&bytes), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn png_round_trip_on_grid() {
        let mut img = Image::new(6, 3, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 13 % 256) as f64 / 255.0;
        }
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn keypoint_json_round_trip() {
        let kp = KeypointSet::new(2, (0..38).map(|i| i as f64 * 1.5).collect()).unwrap();
        assert_eq!(keypoints_from_json(keypoints_to_json(&kp)).unwrap(), kp);
    }
}

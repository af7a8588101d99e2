//! MVOL1, the only on-disk volume format: a line-oriented UTF-8 header
//! sealed with a sha-256 payload digest, then raw little-endian image
//! floats followed by label bytes. Prediction files set `image_bytes 0`
//! and carry labels only.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{LabelVolume, Tensor};

use super::VolumeSample;

const MAGIC: &str = "MVOL1\n";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_volume(sample: &VolumeSample, path: &Path) -> Result<()> {
    sample.check()?;
    let [w, h, z] = sample.labels.extents();

    let mut payload = Vec::new();
    if let Some(image) = &sample.image {
        payload.reserve(image.data().len() * 4 + sample.labels.numel());
        for v in image.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let image_bytes = payload.len();
    payload.extend_from_slice(sample.labels.data());
    let digest = hex(&Sha256::digest(&payload));

    let mut text = String::from(MAGIC);
    text.push_str(&format!("extents {w} {h} {z}\n"));
    text.push_str(&format!(
        "spacing {} {} {}\n",
        sample.spacing[0], sample.spacing[1], sample.spacing[2]
    ));
    text.push_str(&format!("classes {}\n", sample.num_classes));
    text.push_str("image_dtype f32\nlabel_dtype u8\n");
    text.push_str(&format!("image_bytes {image_bytes}\n"));
    text.push_str(&format!("label_bytes {}\n", sample.labels.numel()));
    text.push_str(&format!("digest sha256:{digest}\n"));
    text.push_str(&format!("id {}\n", sample.id));
    text.push('\n');

    let mut bytes = text.into_bytes();
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes)
        .map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
}

pub fn read_volume(path: &Path) -> Result<VolumeSample> {
    let bytes =
        fs::read(path).map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
    let ctx = path.display();

    if !bytes.starts_with(MAGIC.as_bytes()) {
        return Err(Error::data(format!("{ctx}: not an MVOL1 file (bad magic)")));
    }
    // header = magic through the first blank line, all UTF-8
    let mut header_end = None;
    for i in MAGIC.len()..bytes.len().saturating_sub(1) {
        if bytes[i] == b'\n' && bytes[i + 1] == b'\n' {
            header_end = Some(i + 2);
            break;
        }
    }
    let header_end =
        header_end.ok_or_else(|| Error::data(format!("{ctx}: unterminated header")))?;
    let header = std::str::from_utf8(&bytes[MAGIC.len()..header_end])
        .map_err(|_| Error::data(format!("{ctx}: header is not UTF-8")))?;

    let mut extents: Option<[usize; 3]> = None;
    let mut spacing: Option<[f64; 3]> = None;
    let mut classes: Option<usize> = None;
    let mut image_bytes: Option<usize> = None;
    let mut label_bytes: Option<usize> = None;
    let mut digest: Option<String> = None;
    let mut id: Option<String> = None;

    for line in header.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::data(format!("{ctx}: malformed header line `{line}`")))?;
        let bad = |what: &str| Error::data(format!("{ctx}: bad {what} `{value}`"));
        match key {
            "extents" => {
                let parts: Vec<usize> = value
                    .split(' ')
                    .map(|p| p.parse().map_err(|_| bad("extent")))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad("extents"));
                }
                extents = Some([parts[0], parts[1], parts[2]]);
            }
            "spacing" => {
                let parts: Vec<f64> = value
                    .split(' ')
                    .map(|p| p.parse().map_err(|_| bad("spacing")))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad("spacing"));
                }
                spacing = Some([parts[0], parts[1], parts[2]]);
            }
            "classes" => classes = Some(value.parse().map_err(|_| bad("class count"))?),
            "image_dtype" => {
                if value != "f32" {
                    return Err(Error::data(format!("{ctx}: unsupported image dtype {value}")));
                }
            }
            "label_dtype" => {
                if value != "u8" {
                    return Err(Error::data(format!("{ctx}: unsupported label dtype {value}")));
                }
            }
            "image_bytes" => image_bytes = Some(value.parse().map_err(|_| bad("byte count"))?),
            "label_bytes" => label_bytes = Some(value.parse().map_err(|_| bad("byte count"))?),
            "digest" => {
                digest = Some(
                    value
                        .strip_prefix("sha256:")
                        .ok_or_else(|| bad("digest (want sha256:<hex>)"))?
                        .to_string(),
                )
            }
            "id" => id = Some(value.to_string()),
            _ => return Err(Error::data(format!("{ctx}: unknown header key `{key}`"))),
        }
    }

    let missing = |what: &str| Error::data(format!("{ctx}: header is missing `{what}`"));
    let [w, h, z] = extents.ok_or_else(|| missing("extents"))?;
    let spacing = spacing.ok_or_else(|| missing("spacing"))?;
    let num_classes = classes.ok_or_else(|| missing("classes"))?;
    let image_bytes = image_bytes.ok_or_else(|| missing("image_bytes"))?;
    let label_bytes = label_bytes.ok_or_else(|| missing("label_bytes"))?;
    let digest = digest.ok_or_else(|| missing("digest"))?;
    let id = id.ok_or_else(|| missing("id"))?;

    let numel = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(z))
        .ok_or_else(|| Error::data(format!("{ctx}: extents overflow")))?;
    if label_bytes != numel {
        return Err(Error::data(format!(
            "{ctx}: label_bytes {label_bytes} does not match extents {w}x{h}x{z}"
        )));
    }
    if image_bytes != 0 && image_bytes != numel * 4 {
        return Err(Error::data(format!(
            "{ctx}: image_bytes {image_bytes} is neither 0 nor 4x voxel count"
        )));
    }

    let payload = &bytes[header_end..];
    if payload.len() != image_bytes + label_bytes {
        return Err(Error::data(format!(
            "{ctx}: payload is {} bytes, header declares {}",
            payload.len(),
            image_bytes + label_bytes
        )));
    }
    let actual = hex(&Sha256::digest(payload));
    if actual != digest {
        return Err(Error::data(format!(
            "{ctx}: payload digest mismatch (file corrupt?)"
        )));
    }

    let image = if image_bytes > 0 {
        let data: Vec<f32> = payload[..image_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(Tensor::new(&[1, w, h, z], data)?)
    } else {
        None
    };
    let labels = LabelVolume::new([w, h, z], payload[image_bytes..].to_vec())?;

    let sample = VolumeSample { id, image, labels, spacing, num_classes };
    sample.check()?;
    Ok(sample)
}

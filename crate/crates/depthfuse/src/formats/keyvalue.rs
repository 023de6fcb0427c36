use std::path::Path;
use std::str::FromStr;

use depthfuse_core::geometry::{CameraIntrinsics, RigidPose};
use depthfuse_core::synth::{SampleMeta, Weather};

use super::{read_bytes, write_bytes, FormatError, FormatResult};

/// Ordered `key=value` pairs with the byte offset of each line. Blank lines
/// and lines starting with `#` are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    pub path: std::path::PathBuf,
    pub entries: Vec<(String, String, usize)>,
}

pub fn parse_key_values(text: &str, path: &Path) -> FormatResult<KeyValues> {
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| FormatError::malformed(path, start, format!("expected key=value, got `{body}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(FormatError::malformed(path, start, "empty key"));
        }
        if entries.iter().any(|e| e.0 == k) {
            return Err(FormatError::malformed(path, start, format!("duplicate key `{k}`")));
        }
        entries.push((k.to_string(), v.trim().to_string(), start));
    }
    Ok(KeyValues { path: path.to_path_buf(), entries })
}

impl KeyValues {
    pub fn read(path: &Path) -> FormatResult<Self> {
        let bytes = read_bytes(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| FormatError::malformed(path, e.valid_up_to(), "not UTF-8 text"))?;
        parse_key_values(text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.0 == key).map(|e| e.1.as_str())
    }

    fn offset(&self, key: &str) -> usize {
        self.entries.iter().find(|e| e.0 == key).map_or(0, |e| e.2)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> FormatResult<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| FormatError::malformed(&self.path, self.offset(key), format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> FormatResult<T> {
        self.parse(key)?
            .ok_or_else(|| FormatError::malformed(&self.path, 0, format!("missing key `{key}`")))
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> FormatResult<()> {
        match self.entries.iter().find(|e| !known.contains(&e.0.as_str())) {
            Some((k, _, off)) => Err(FormatError::malformed(&self.path, *off, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

pub fn write_meta(path: &Path, meta: &SampleMeta) -> FormatResult<()> {
    let text = format!("id={}\nweather={}\nseed={}\n", meta.id, meta.weather.name(), meta.seed);
    write_bytes(path, text.as_bytes())
}

pub fn read_meta(path: &Path) -> FormatResult<SampleMeta> {
    let kv = KeyValues::read(path)?;
    let weather_name: String = kv.require("weather")?;
    let weather = Weather::parse(&weather_name).ok_or_else(|| {
        FormatError::malformed(path, kv.offset("weather"), format!("unknown weather `{weather_name}`"))
    })?;
    Ok(SampleMeta { id: kv.require("id")?, weather, seed: kv.require("seed")? })
}

/// Camera intrinsics plus the sensor-to-camera pose (`r00..r22`, `t0..t2`,
/// identity when absent).
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidPose,
}

const ROTATION_KEYS: [&str; 9] = ["r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"];
const TRANSLATION_KEYS: [&str; 3] = ["t0", "t1", "t2"];

pub fn read_calibration(path: &Path) -> FormatResult<Calibration> {
    let kv = KeyValues::read(path)?;
    let mut known = vec!["fx", "fy", "cx", "cy", "width", "height"];
    known.extend(ROTATION_KEYS);
    known.extend(TRANSLATION_KEYS);
    kv.reject_unknown(&known)?;
    let intrinsics = CameraIntrinsics::new(
        kv.require("fx")?,
        kv.require("fy")?,
        kv.require("cx")?,
        kv.require("cy")?,
        kv.require("width")?,
        kv.require("height")?,
    )
    .map_err(|e| FormatError::malformed(path, 0, e.to_string()))?;
    let identity = RigidPose::identity();
    let mut rotation = identity.rotation;
    for (r, key) in rotation.iter_mut().zip(ROTATION_KEYS) {
        if let Some(v) = kv.parse(key)? {
            *r = v;
        }
    }
    let mut translation = [0.0; 3];
    for (t, key) in translation.iter_mut().zip(TRANSLATION_KEYS) {
        *t = kv.parse(key)?.unwrap_or(0.0);
    }
    let pose = RigidPose::new(rotation, translation).map_err(|e| FormatError::malformed(path, 0, e.to_string()))?;
    Ok(Calibration { intrinsics, pose })
}

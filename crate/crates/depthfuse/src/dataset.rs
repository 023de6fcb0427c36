//! Dataset directories: `<root>/<split>/<id>_{rgb.ppm,sparse.pgm,gt.pgm,meta.txt}`.

use std::path::{Path, PathBuf};

use depthfuse_core::synth::{generate_sample, Sample, SceneSpec, WeatherMix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formats::{
    read_meta, read_pgm_depth, read_ppm, write_meta, write_pgm_depth, write_ppm, FormatError, FormatResult,
};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SamplePaths {
    pub id: String,
    pub rgb: PathBuf,
    pub sparse: PathBuf,
    pub gt: PathBuf,
    pub meta: PathBuf,
}

impl SamplePaths {
    pub fn new(dir: &Path, id: &str) -> Self {
        Self {
            id: id.to_string(),
            rgb: dir.join(format!("{id}_rgb.ppm")),
            sparse: dir.join(format!("{id}_sparse.pgm")),
            gt: dir.join(format!("{id}_gt.pgm")),
            meta: dir.join(format!("{id}_meta.txt")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: no samples found", .0.display())]
    Empty(PathBuf),
    #[error("sample `{id}`: {reason}")]
    Invalid { id: String, reason: String },
}

pub fn save_sample(sample: &Sample, dir: &Path) -> Result<SamplePaths, DatasetError> {
    std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
    let paths = SamplePaths::new(dir, &sample.meta.id);
    write_ppm(&paths.rgb, &sample.rgb)?;
    write_pgm_depth(&paths.sparse, &sample.sparse)?;
    write_pgm_depth(&paths.gt, &sample.gt)?;
    write_meta(&paths.meta, &sample.meta)?;
    Ok(paths)
}

pub fn load_sample(paths: &SamplePaths) -> Result<Sample, DatasetError> {
    let sample = Sample {
        rgb: read_ppm(&paths.rgb)?,
        sparse: read_pgm_depth(&paths.sparse)?,
        gt: read_pgm_depth(&paths.gt)?,
        meta: read_meta(&paths.meta)?,
    };
    sample.validate().map_err(|e| DatasetError::Invalid { id: paths.id.clone(), reason: e.to_string() })?;
    Ok(sample)
}

/// Samples of a split directory, identified by their RGB files, sorted by id.
pub fn list_split(dir: &Path) -> Result<Vec<SamplePaths>, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix("_rgb.ppm")) {
            out.push(SamplePaths::new(dir, id));
        }
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(dir.to_path_buf()));
    }
    out.sort();
    Ok(out)
}

pub fn load_split(dir: &Path) -> Result<Vec<Sample>, DatasetError> {
    list_split(dir)?.iter().map(load_sample).collect()
}

/// Generation settings for a split.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub mix: WeatherMix,
    pub seed: u64,
}

/// Per-sample seeds and weather tags drawn from one stream seeded by `seed`.
pub fn sample_plan(count: usize, mix: &WeatherMix, seed: u64) -> Vec<(u64, depthfuse_core::synth::Weather)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (rng.random::<u64>(), mix.pick(rng.random::<f64>()))).collect()
}

pub fn generate_split(cfg: &GenerateConfig, dir: &Path) -> Result<Vec<SamplePaths>, DatasetError> {
    let base = SceneSpec::for_size(cfg.width, cfg.height);
    sample_plan(cfg.count, &cfg.mix, cfg.seed)
        .into_iter()
        .enumerate()
        .map(|(i, (seed, weather))| {
            let spec = base.clone().with_weather(weather);
            let mut sample = generate_sample(&spec, seed)
                .map_err(|e| DatasetError::Invalid { id: format!("{i:06}"), reason: e.to_string() })?;
            sample.meta.id = format!("{i:06}");
            save_sample(&sample, dir)
        })
        .collect()
}

/// Sample as it reads back from disk: RGB on the 1/255 grid, depth on the
/// 1/256 m grid.
pub fn quantize(sample: &Sample) -> FormatResult<Sample> {
    use crate::formats::{decode_pgm_depth, decode_ppm, encode_pgm_depth, encode_ppm};
    let p = Path::new("<memory>");
    Ok(Sample {
        rgb: decode_ppm(&encode_ppm(&sample.rgb), p)?,
        sparse: decode_pgm_depth(&encode_pgm_depth(&sample.sparse), p)?,
        gt: decode_pgm_depth(&encode_pgm_depth(&sample.gt), p)?,
        meta: sample.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use depthfuse_core::synth::Weather;

    #[test]
    fn save_load_is_exact_at_stored_precision() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_sample(&SceneSpec::for_size(16, 8).with_weather(Weather::Fog), 5).unwrap();
        let q = quantize(&s).unwrap();
        let paths = save_sample(&s, dir.path()).unwrap();
        assert_eq!(load_sample(&paths).unwrap(), q);
        assert_eq!(list_split(dir.path()).unwrap(), vec![paths]);
    }

    #[test]
    fn empty_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(list_split(dir.path()), Err(DatasetError::Empty(_))));
    }
}

use std::path::Path;

use depthfuse_core::geometry::PointCloud;

use super::{read_bytes, write_bytes, FormatError, FormatResult};

/// CSV with header `x,y,z` or `x,y,z,intensity`. Values are written in
/// shortest round-trip form, so reading back is exact.
pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, rec: &[String]| w.write_record(rec).expect("in-memory write");
    match &cloud.intensity {
        Some(_) => write(&mut w, &["x", "y", "z", "intensity"].map(String::from)),
        None => write(&mut w, &["x", "y", "z"].map(String::from)),
    }
    for (i, p) in cloud.points.iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        if let Some(int) = &cloud.intensity {
            rec.push(int[i].to_string());
        }
        write(&mut w, &rec);
    }
    w.into_inner().expect("in-memory flush")
}

pub fn decode_point_cloud(bytes: &[u8], path: &Path) -> FormatResult<PointCloud> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let header = r.headers().map_err(|e| FormatError::malformed(path, 0, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let with_intensity = match cols.as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "intensity"] => true,
        _ => return Err(FormatError::malformed(path, 0, format!("unexpected header `{}`", cols.join(",")))),
    };
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            FormatError::malformed(path, offset, e.to_string())
        })?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| FormatError::malformed(path, offset, format!("invalid number `{s}`"))))
            .collect::<FormatResult<_>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::malformed(path, offset, "non-finite coordinate"));
        }
        points.push([vals[0], vals[1], vals[2]]);
        if with_intensity {
            intensity.push(vals[3]);
        }
    }
    Ok(PointCloud { points, intensity: with_intensity.then_some(intensity) })
}

pub fn read_point_cloud(path: &Path) -> FormatResult<PointCloud> {
    decode_point_cloud(&read_bytes(path)?, path)
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> FormatResult<()> {
    write_bytes(path, &encode_point_cloud(cloud))
}

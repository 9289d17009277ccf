use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{open, with_path, with_writer};
use crate::error::{Error, Result};
use crate::splat::{Gaussian3D, GaussianCloud, Intrinsics, PinholeCamera};
use crate::trainer::LossReport;
use crate::trajectory::CameraTrajectory;

const TRJ: &str = "TRJ1";
const GSC: &str = "GSC1";
const DEFAULT_NEAR: f64 = 0.01;

fn put(w: &mut impl Write, s: std::fmt::Arguments) -> Result<()> {
    w.write_fmt(s).map_err(|e| Error::Io {
        path: Default::default(),
        source: e,
    })
}

/// Nonblank lines with their 1-based line numbers.
fn lines(r: impl BufRead, format: &'static str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::format(format, e.to_string()))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line.trim().to_string()));
        }
    }
    Ok(out)
}

fn header(lines: &[(usize, String)], magic: &str, format: &'static str) -> Result<usize> {
    let (_, first) = lines.first().ok_or_else(|| Error::format(format, "empty file"))?;
    let mut it = first.split_whitespace();
    if it.next() != Some(magic) {
        return Err(Error::format(
            format,
            format!("expected header \"{magic} <count>\", got {first:?}"),
        ));
    }
    let count = it
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::format(format, format!("bad count in header {first:?}")))?;
    if it.next().is_some() {
        return Err(Error::format(format, format!("junk after header count in {first:?}")));
    }
    Ok(count)
}

fn numbers(line: &str, n: usize, lineno: usize, format: &'static str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(format, format!("line {lineno}: not a number in {line:?}")))?;
    if vals.len() != n {
        return Err(Error::format(
            format,
            format!("line {lineno}: expected {n} fields, found {}", vals.len()),
        ));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(format, format!("line {lineno}: non-finite value")));
    }
    Ok(vals)
}

/// Header `TRJ1 <count>`, an `# image <width> <height> <near>` line, then one
/// `k tx ty tz qw qx qy qz fx fy cx cy` line per pose.
pub fn write_trajectory(w: &mut impl Write, traj: &CameraTrajectory) -> Result<()> {
    put(w, format_args!("{TRJ} {}\n", traj.len()))?;
    let k0 = traj.poses()[0].intrinsics;
    put(w, format_args!("# image {} {} {}\n", k0.width, k0.height, k0.near))?;
    for (t, p) in traj.readouts().iter().zip(traj.poses()) {
        if (p.intrinsics.width, p.intrinsics.height, p.intrinsics.near) != (k0.width, k0.height, k0.near) {
            return Err(Error::invalid(
                "all poses of a trajectory file must share image size and near plane",
            ));
        }
        let q = p.rotation.quaternion();
        let tr = p.translation;
        let k = p.intrinsics;
        put(
            w,
            format_args!(
                "{t} {} {} {} {} {} {} {} {} {} {} {}\n",
                tr.x, tr.y, tr.z, q.w, q.i, q.j, q.k, k.fx, k.fy, k.cx, k.cy
            ),
        )?;
    }
    Ok(())
}

/// Without an `# image` line the size is taken as twice the principal point.
pub fn read_trajectory(r: impl BufRead) -> Result<CameraTrajectory> {
    let all = lines(r, TRJ)?;
    let count = header(&all, TRJ, TRJ)?;
    let mut size: Option<(usize, usize, f64)> = None;
    let mut readouts = Vec::with_capacity(count);
    let mut poses = Vec::with_capacity(count);
    for (lineno, line) in &all[1..] {
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            if it.next() == Some("image") {
                let f: Vec<&str> = it.collect();
                let parsed = (f.len() == 3)
                    .then(|| Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?)))
                    .flatten();
                size = Some(parsed.ok_or_else(|| Error::format(TRJ, format!("line {lineno}: bad image line")))?);
            }
            continue;
        }
        let first = line.split_whitespace().next().unwrap_or("");
        let k: usize = first
            .parse()
            .map_err(|_| Error::format(TRJ, format!("line {lineno}: bad readout index {first:?}")))?;
        let rest = line[first.len()..].trim();
        let v = numbers(rest, 11, *lineno, TRJ)?;
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        let norm = q.norm();
        if norm == 0.0 {
            return Err(Error::format(TRJ, format!("line {lineno}: zero quaternion")));
        }
        let rotation = if (norm - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        let (width, height, near) = size.unwrap_or((
            (2.0 * v[9]).round() as usize,
            (2.0 * v[10]).round() as usize,
            DEFAULT_NEAR,
        ));
        let intrinsics = Intrinsics {
            fx: v[7],
            fy: v[8],
            cx: v[9],
            cy: v[10],
            width,
            height,
            near,
        };
        readouts.push(k);
        poses.push(PinholeCamera::new(rotation, Vector3::new(v[0], v[1], v[2]), intrinsics));
    }
    if poses.len() != count {
        return Err(Error::format(
            TRJ,
            format!("header announces {count} poses, found {}", poses.len()),
        ));
    }
    CameraTrajectory::new(readouts, poses).map_err(|e| Error::format(TRJ, e.to_string()))
}

/// Header `GSC1 <count>`, then per Gaussian
/// `px py pz sx sy sz qw qx qy qz opacity_logit intensity_logit` with
/// log-space scales.
pub fn write_cloud(w: &mut impl Write, cloud: &GaussianCloud) -> Result<()> {
    put(w, format_args!("{GSC} {}\n", cloud.len()))?;
    for g in &cloud.gaussians {
        let a = g.to_array();
        let fields: Vec<String> = a.iter().map(|v| v.to_string()).collect();
        put(w, format_args!("{}\n", fields.join(" ")))?;
    }
    Ok(())
}

pub fn read_cloud(r: impl BufRead) -> Result<GaussianCloud> {
    let all = lines(r, GSC)?;
    let count = header(&all, GSC, GSC)?;
    let mut gaussians = Vec::with_capacity(count);
    for (lineno, line) in &all[1..] {
        if line.starts_with('#') {
            continue;
        }
        let v = numbers(line, 12, *lineno, GSC)?;
        gaussians.push(Gaussian3D::from_array(&v));
    }
    if gaussians.len() != count {
        return Err(Error::format(
            GSC,
            format!("header announces {count} Gaussians, found {}", gaussians.len()),
        ));
    }
    Ok(GaussianCloud::new(gaussians))
}

pub fn write_loss_csv(w: &mut impl Write, history: &[LossReport]) -> Result<()> {
    put(w, format_args!("iter,instant,exposure,total\n"))?;
    for r in history {
        put(
            w,
            format_args!("{},{},{},{}\n", r.iteration, r.instant, r.exposure, r.total),
        )?;
    }
    Ok(())
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &CameraTrajectory) -> Result<()> {
    let path = path.as_ref();
    with_writer(path, |w| write_trajectory(w, traj)).map_err(|e| with_path(e, path))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<CameraTrajectory> {
    let path = path.as_ref();
    read_trajectory(open(path)?).map_err(|e| with_path(e, path))
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &GaussianCloud) -> Result<()> {
    let path = path.as_ref();
    with_writer(path, |w| write_cloud(w, cloud)).map_err(|e| with_path(e, path))
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    read_cloud(open(path)?).map_err(|e| with_path(e, path))
}

pub fn save_loss_csv(path: impl AsRef<Path>, history: &[LossReport]) -> Result<()> {
    let path = path.as_ref();
    with_writer(path, |w| write_loss_csv(w, history)).map_err(|e| with_path(e, path))
}

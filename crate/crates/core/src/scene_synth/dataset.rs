use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::camera::{Camera, Vec3};
use crate::deform_render::splat_render;
use crate::error::{Error, Result};
use crate::image::{read_pnm, write_pnm, Image};
use crate::par;
use crate::point_field::{read_pts, write_pts, GaussianPointSet};

use super::SyntheticScene;

const ORBIT_RADIUS: f64 = 3.0;
const ORBIT_ELEVATION: f64 = 0.5;
const ORBIT_FOV: f64 = 0.75;

/// Training views on an orbit: view 0 is the front (+z), the rest are
/// evenly spaced in azimuth.
pub fn default_cameras(views: usize, width: usize, height: usize) -> Vec<Camera> {
    (0..views)
        .map(|j| {
            let az = 2.0 * std::f64::consts::PI * j as f64 / views as f64;
            Camera::orbit([0.0; 3], ORBIT_RADIUS, az, ORBIT_ELEVATION, ORBIT_FOV, width, height)
        })
        .collect()
}

/// Evaluation views at azimuths -75, 15, 105 and 195 degrees.
pub fn holdout_cameras(width: usize, height: usize) -> Vec<Camera> {
    [-75.0f64, 15.0, 105.0, 195.0]
        .iter()
        .map(|deg| {
            Camera::orbit(
                [0.0; 3],
                ORBIT_RADIUS,
                deg.to_radians(),
                ORBIT_ELEVATION,
                ORBIT_FOV,
                width,
                height,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub train: Vec<Camera>,
    pub holdout: Vec<Camera>,
}

/// Ground-truth multi-view video. Images are indexed `i * views + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: usize,
    pub cameras: Vec<Camera>,
    pub holdout: Vec<Camera>,
    pub background: Vec3,
    pub images: Vec<Image>,
    pub masks: Vec<Image>,
    pub holdout_images: Vec<Image>,
    pub holdout_masks: Vec<Image>,
    /// Ground-truth points at the middle frame.
    pub gt_points: GaussianPointSet,
}

impl Dataset {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn width(&self) -> usize {
        self.cameras[0].width
    }

    pub fn height(&self) -> usize {
        self.cameras[0].height
    }

    pub fn middle(&self) -> usize {
        self.frames / 2
    }

    pub fn time_norm(&self, i: usize) -> f64 {
        i as f64 / (self.frames - 1) as f64
    }

    pub fn image(&self, i: usize, j: usize) -> &Image {
        &self.images[i * self.views() + j]
    }

    pub fn mask(&self, i: usize, j: usize) -> &Image {
        &self.masks[i * self.views() + j]
    }

    pub fn holdout_image(&self, i: usize, j: usize) -> &Image {
        &self.holdout_images[i * self.holdout.len() + j]
    }
}

fn render_all(scene: &SyntheticScene, cams: &[Camera], frames: usize) -> (Vec<Image>, Vec<Image>) {
    let v = cams.len();
    let out = par::map_range(frames * v, |k| {
        let (i, j) = (k / v, k % v);
        let t = i as f64 / (frames - 1) as f64;
        let r = splat_render(&scene.points_at(t), &cams[j], scene.background);
        let mask = Image {
            data: r.alpha.data.iter().map(|&a| if a > 0.5 { 1.0 } else { 0.0 }).collect(),
            ..r.alpha
        };
        (r.rgb, mask)
    });
    out.into_iter().unzip()
}

/// Renders every frame from every camera with the splat rasterizer and
/// thresholds alpha at 0.5 for the foreground masks.
pub fn render_dataset(
    scene: &SyntheticScene,
    cameras: &[Camera],
    holdout: &[Camera],
    frames: usize,
) -> Result<Dataset> {
    if cameras.is_empty() {
        return Err(Error::Config("camera list is empty".into()));
    }
    if cameras.len() < 2 {
        return Err(Error::Config("at least two cameras are required".into()));
    }
    if frames < 2 {
        return Err(Error::Config("at least two frames are required".into()));
    }
    for c in cameras.iter().chain(holdout) {
        c.validate()?;
    }
    let (images, masks) = render_all(scene, cameras, frames);
    let (holdout_images, holdout_masks) = render_all(scene, holdout, frames);
    let mid_t = (frames / 2) as f64 / (frames - 1) as f64;
    Ok(Dataset {
        frames,
        cameras: cameras.to_vec(),
        holdout: holdout.to_vec(),
        background: scene.background,
        images,
        masks,
        holdout_images,
        holdout_masks,
        gt_points: scene.points_at(mid_t),
    })
}

fn fmt3(v: Vec3) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

/// Writes `frames/{i}_{j}.ppm`, `masks/{i}_{j}.pgm`, `cameras.cfg` and
/// `scene_gt.pts`. Held-out cameras follow the training cameras in the
/// `j` numbering.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let v = ds.views();
    let mut cfg = String::new();
    cfg.push_str(&format!("width = {}\nheight = {}\n", ds.width(), ds.height()));
    cfg.push_str(&format!("frames = {}\ntrain_views = {}\n", ds.frames, v));
    cfg.push_str(&format!("background = {}\n", fmt3(ds.background)));
    for (j, c) in ds.cameras.iter().chain(&ds.holdout).enumerate() {
        cfg.push_str(&format!("cam{j}.pos = {}\n", fmt3(c.position)));
        cfg.push_str(&format!("cam{j}.lookat = {}\n", fmt3(c.look_at)));
        cfg.push_str(&format!("cam{j}.up = {}\n", fmt3(c.up)));
        cfg.push_str(&format!("cam{j}.fov = {}\n", c.fov_y));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg_path = dir.join("cameras.cfg");
    fs::write(&cfg_path, cfg).map_err(|e| Error::io(&cfg_path, e))?;
    let h = ds.holdout.len();
    for i in 0..ds.frames {
        for j in 0..v + h {
            let (img, mask) = if j < v {
                (&ds.images[i * v + j], &ds.masks[i * v + j])
            } else {
                (&ds.holdout_images[i * h + j - v], &ds.holdout_masks[i * h + j - v])
            };
            write_pnm(&dir.join(format!("frames/{i}_{j}.ppm")), img)?;
            write_pnm(&dir.join(format!("masks/{i}_{j}.pgm")), mask)?;
        }
    }
    write_pts(&dir.join("scene_gt.pts"), &ds.gt_points)
}

fn parse_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {} is not `key = value`", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::format(path, format!("missing key `{key}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("bad value for `{key}`: {s}")))
}

fn parse_vec3(s: &str, key: &str, path: &Path) -> Result<Vec3> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|t| parse_num(t, key, path))
        .collect::<Result<_>>()?;
    if v.len() != 3 {
        return Err(Error::format(path, format!("`{key}` needs three numbers")));
    }
    Ok([v[0], v[1], v[2]])
}

/// Parses `cameras.cfg`. Returns the rig, frame count and background.
pub fn read_cameras_cfg(path: &Path) -> Result<(CameraRig, usize, Vec3)> {
    let map = parse_kv(path)?;
    let width: usize = parse_num(get(&map, "width", path)?, "width", path)?;
    let height: usize = parse_num(get(&map, "height", path)?, "height", path)?;
    let frames: usize = parse_num(get(&map, "frames", path)?, "frames", path)?;
    let background = match map.get("background") {
        Some(s) => parse_vec3(s, "background", path)?,
        None => [1.0; 3],
    };
    let mut cams = Vec::new();
    while map.contains_key(&format!("cam{}.pos", cams.len())) {
        let j = cams.len();
        let key = |s: &str| format!("cam{j}.{s}");
        let cam = Camera::new(
            parse_vec3(get(&map, &key("pos"), path)?, &key("pos"), path)?,
            parse_vec3(get(&map, &key("lookat"), path)?, &key("lookat"), path)?,
            parse_vec3(get(&map, &key("up"), path)?, &key("up"), path)?,
            parse_num(get(&map, &key("fov"), path)?, &key("fov"), path)?,
            width,
            height,
        )?;
        cams.push(cam);
    }
    let train_views = match map.get("train_views") {
        Some(s) => parse_num(s, "train_views", path)?,
        None => cams.len(),
    };
    if train_views > cams.len() || cams.is_empty() {
        return Err(Error::format(path, "train_views exceeds the number of cameras"));
    }
    let holdout = cams.split_off(train_views);
    Ok((
        CameraRig {
            train: cams,
            holdout,
        },
        frames,
        background,
    ))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (rig, frames, background) = read_cameras_cfg(&dir.join("cameras.cfg"))?;
    let (v, h) = (rig.train.len(), rig.holdout.len());
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut holdout_images = Vec::new();
    let mut holdout_masks = Vec::new();
    for i in 0..frames {
        for j in 0..v + h {
            let img = read_pnm(&dir.join(format!("frames/{i}_{j}.ppm")))?;
            let mask = read_pnm(&dir.join(format!("masks/{i}_{j}.pgm")))?;
            if j < v {
                images.push(img);
                masks.push(mask);
            } else {
                holdout_images.push(img);
                holdout_masks.push(mask);
            }
        }
    }
    let gt_points = read_pts(&dir.join("scene_gt.pts"))?;
    Ok(Dataset {
        frames,
        cameras: rig.train,
        holdout: rig.holdout,
        background,
        images,
        masks,
        holdout_images,
        holdout_masks,
        gt_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_synth::{generate_scene, MotionFamily, SceneSpec};

    fn small_scene(fraction_static: f64) -> SyntheticScene {
        let spec = SceneSpec {
            num_points: 40,
            fraction_static,
            ..SceneSpec::preset(MotionFamily::Oscillate)
        };
        generate_scene(&spec, 2).unwrap()
    }

    #[test]
    fn static_scene_frames_identical_over_time() {
        let s = small_scene(1.0);
        let ds = render_dataset(&s, &default_cameras(2, 16, 16), &[], 3).unwrap();
        for j in 0..2 {
            assert_eq!(ds.image(0, j), ds.image(2, j));
            assert_eq!(ds.mask(0, j), ds.mask(1, j));
        }
    }

    #[test]
    fn config_errors() {
        let s = small_scene(0.5);
        assert!(matches!(render_dataset(&s, &[], &[], 4), Err(Error::Config(_))));
        assert!(render_dataset(&s, &default_cameras(2, 8, 8), &[], 1).is_err());
    }

    #[test]
    fn single_point_mask_is_one_blob() {
        let mut s = small_scene(1.0);
        s.base_positions.truncate(1);
        s.base_positions[0] = [0.0; 3];
        s.colors.truncate(1);
        s.dynamic.truncate(1);
        s.opacity = 1.0;
        s.splat_scale = 0.15;
        let ds = render_dataset(&s, &default_cameras(2, 24, 24), &[], 2).unwrap();
        let m = ds.mask(0, 0);
        let on: Vec<(usize, usize)> = (0..24)
            .flat_map(|y| (0..24).map(move |x| (x, y)))
            .filter(|&(x, y)| m.pixel(x, y)[0] > 0.5)
            .collect();
        assert!(!on.is_empty());
        // flood fill from the first foreground pixel reaches all of them
        let mut seen = vec![false; 24 * 24];
        let mut stack = vec![on[0]];
        let mut count = 0;
        while let Some((x, y)) = stack.pop() {
            if seen[y * 24 + x] || m.pixel(x, y)[0] < 0.5 {
                continue;
            }
            seen[y * 24 + x] = true;
            count += 1;
            if x > 0 {
                stack.push((x - 1, y));
            }
            if x < 23 {
                stack.push((x + 1, y));
            }
            if y > 0 {
                stack.push((x, y - 1));
            }
            if y < 23 {
                stack.push((x, y + 1));
            }
        }
        assert_eq!(count, on.len());
    }

    #[test]
    fn mirrored_scene_and_camera_give_mirrored_image() {
        let s = small_scene(0.5);
        let mut mirrored = s.clone();
        for p in mirrored.base_positions.iter_mut() {
            p[0] = -p[0];
        }
        let cam = default_cameras(4, 20, 20)[1].clone();
        let mcam = Camera {
            position: [-cam.position[0], cam.position[1], cam.position[2]],
            look_at: [-cam.look_at[0], cam.look_at[1], cam.look_at[2]],
            ..cam.clone()
        };
        let t = 0.3;
        let a = splat_render(&s.points_at(t), &cam, s.background);
        let b = splat_render(&mirrored.points_at(t), &mcam, s.background);
        let flipped = b.rgb.flip_horizontal();
        for (x, y) in a.rgb.data.iter().zip(&flipped.data) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = small_scene(0.5);
        let ds = render_dataset(&s, &default_cameras(3, 16, 16), &holdout_cameras(16, 16), 2).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert!(dir.path().join("frames/1_2.ppm").exists());
        assert!(dir.path().join("masks/0_6.pgm").exists());
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.views(), 3);
        assert_eq!(back.holdout.len(), 4);
        assert_eq!(back.masks, ds.masks);
        for (a, b) in back.images.iter().zip(&ds.images) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        for (a, b) in back.cameras.iter().zip(&ds.cameras) {
            assert_eq!(a, b);
        }
        assert_eq!(back.gt_points, ds.gt_points);
    }
}

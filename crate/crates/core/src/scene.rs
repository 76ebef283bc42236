//! Procedural rooms: a floor plane with boxes and spheres resting on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::vocab::{CLASSES, COLORS, COLOR_RGB, FLOOR_CLASS, FLOOR_RGB};

pub type Vec3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub center: Vec3,
    pub size: Vec3,
}

impl BBox {
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.size[a] / 2.0 + tol)
    }

    /// Center followed by size, the numerical payload of a box prompt.
    pub fn to_payload(&self) -> Vec<f64> {
        self.center.iter().chain(&self.size).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    /// Sorted, nonempty.
    pub point_indices: Vec<usize>,
    pub class_id: usize,
    pub bbox: BBox,
    pub color: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    /// Horizontal field of view, degrees.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub points: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    /// Empty until the scene is segmented.
    pub segment_ids: Vec<usize>,
    pub instances: Vec<Instance>,
    pub cameras: Vec<Camera>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Instance index per point; `None` for background.
    pub fn point_instances(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.len()];
        for (k, inst) in self.instances.iter().enumerate() {
            for &p in &inst.point_indices {
                out[p] = Some(k);
            }
        }
        out
    }

    /// Class label per point, with the floor class for background.
    pub fn point_classes(&self) -> Vec<usize> {
        self.point_instances()
            .into_iter()
            .map(|i| i.map_or(FLOOR_CLASS, |k| self.instances[k].class_id))
            .collect()
    }

    pub fn instances_of(&self, class_id: usize) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|&k| self.instances[k].class_id == class_id)
            .collect()
    }

    /// Checks the structural invariants of a scene.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if self.points.is_empty() || self.colors.len() != self.points.len() {
            return bad("points and colors must be nonempty and aligned".into());
        }
        if !self.segment_ids.is_empty() && self.segment_ids.len() != self.points.len() {
            return bad("segment ids misaligned with points".into());
        }
        let mut owner = vec![false; self.len()];
        for (k, inst) in self.instances.iter().enumerate() {
            if inst.point_indices.is_empty() {
                return bad(format!("instance {k} is empty"));
            }
            if inst.class_id >= CLASSES.len() || inst.color >= COLORS.len() {
                return bad(format!("instance {k} has an out-of-range label"));
            }
            if inst.point_indices.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("instance {k} indices not strictly sorted"));
            }
            for &p in &inst.point_indices {
                if p >= self.len() || owner[p] {
                    return bad(format!("instance {k} point {p} invalid or shared"));
                }
                owner[p] = true;
                if !inst.bbox.contains(&self.points[p], 1e-9) {
                    return bad(format!("instance {k} point {p} outside bbox"));
                }
            }
        }
        for c in &self.cameras {
            if c.width < 8 || c.height < 8 || !(c.fov > 10.0 && c.fov < 170.0) {
                return bad("camera parameters out of range".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Box,
    Sphere,
}

/// Base shape and nominal size (x, y, z) of each class.
fn template(class_id: usize) -> (Shape, Vec3) {
    match CLASSES[class_id] {
        "chair" => (Shape::Box, [0.5, 0.5, 0.9]),
        "table" => (Shape::Box, [1.2, 0.8, 0.75]),
        "lamp" => (Shape::Box, [0.3, 0.3, 1.4]),
        "sofa" => (Shape::Box, [1.8, 0.8, 0.8]),
        "bed" => (Shape::Box, [1.6, 1.1, 0.5]),
        "cabinet" => (Shape::Box, [0.8, 0.45, 1.1]),
        "shelf" => (Shape::Box, [0.9, 0.3, 1.6]),
        "desk" => (Shape::Box, [1.1, 0.6, 0.75]),
        "vase" => (Shape::Sphere, [0.3, 0.3, 0.3]),
        "plant" => (Shape::Sphere, [0.6, 0.6, 0.6]),
        "box" => (Shape::Box, [0.45, 0.45, 0.45]),
        "monitor" => (Shape::Box, [0.6, 0.15, 0.45]),
        other => unreachable!("no template for {other}"),
    }
}

struct Placed {
    class_id: usize,
    color: usize,
    shape: Shape,
    bbox: BBox,
}

impl Placed {
    fn surface_area(&self) -> f64 {
        let [x, y, z] = self.bbox.size;
        match self.shape {
            // bottom face rests on the floor and is not sampled
            Shape::Box => x * y + 2.0 * (x * z + y * z),
            Shape::Sphere => std::f64::consts::PI * x * x,
        }
    }

    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let c = self.bbox.center;
        let h = self.bbox.size.map(|s| s / 2.0);
        let p = match self.shape {
            Shape::Sphere => {
                let d: [f64; 3] = UnitSphere.sample(rng);
                [c[0] + h[0] * d[0], c[1] + h[0] * d[1], c[2] + h[0] * d[2]]
            }
            Shape::Box => {
                let [x, y, z] = self.bbox.size;
                let faces = [x * y, x * z, x * z, y * z, y * z];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut face = faces.len() - 1;
                for (i, a) in faces.iter().enumerate() {
                    if pick < *a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u: f64 = rng.random_range(-1.0..1.0);
                let v: f64 = rng.random_range(-1.0..1.0);
                match face {
                    0 => [c[0] + u * h[0], c[1] + v * h[1], c[2] + h[2]],
                    1 => [c[0] + u * h[0], c[1] - h[1], c[2] + v * h[2]],
                    2 => [c[0] + u * h[0], c[1] + h[1], c[2] + v * h[2]],
                    3 => [c[0] - h[0], c[1] + u * h[1], c[2] + v * h[2]],
                    _ => [c[0] + h[0], c[1] + u * h[1], c[2] + v * h[2]],
                }
            }
        };
        std::array::from_fn(|a| p[a].clamp(c[a] - h[a], c[a] + h[a]))
    }
}

/// Gap between two footprints along the more separated horizontal axis.
fn footprint_gap(a: &BBox, b: &BBox) -> f64 {
    let gx = (a.center[0] - b.center[0]).abs() - (a.size[0] + b.size[0]) / 2.0;
    let gy = (a.center[1] - b.center[1]).abs() - (a.size[1] + b.size[1]) / 2.0;
    gx.max(gy)
}

/// Splits `total` proportionally to `weights` (largest remainder), giving
/// every entry at least one.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let n = weights.len();
    let spare = total - n;
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * spare as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

fn noisy(base: Vec3, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec3 {
    base.map(|c| (c + noise.sample(rng)).clamp(0.0, 1.0))
}

/// Cameras evenly spaced on a ring around `target`, all facing it.
pub fn ring_cameras(target: Vec3, cfg: &SceneConfig) -> Vec<Camera> {
    let radius = 0.75 * cfg.room_extent;
    (0..cfg.cameras)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_4
                + 2.0 * std::f64::consts::PI * k as f64 / cfg.cameras as f64;
            Camera {
                position: [
                    target[0] + radius * a.cos(),
                    target[1] + radius * a.sin(),
                    cfg.camera_elevation,
                ],
                look_at: target,
                fov: cfg.camera_fov,
                width: cfg.camera_width,
                height: cfg.camera_height,
            }
        })
        .collect()
}

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let n_points = rng.random_range(cfg.min_points..=cfg.max_points);
    let n_floor = (n_points as f64 * cfg.floor_fraction).round() as usize;
    if n_points < n_floor + n_obj {
        return Err(Error::Scene(format!(
            "{n_points} points cannot cover {n_obj} objects and {n_floor} floor points"
        )));
    }
    let half_room = cfg.room_extent / 2.0;

    let mut placed: Vec<Placed> = Vec::with_capacity(n_obj);
    let mut attempts = 0;
    while placed.len() < n_obj {
        attempts += 1;
        if attempts > cfg.place_retries * n_obj.max(1) {
            return Err(Error::Scene(format!(
                "placed {} of {n_obj} objects after {} attempts",
                placed.len(),
                attempts - 1
            )));
        }
        let class_id = rng.random_range(0..CLASSES.len());
        let color = rng.random_range(0..COLORS.len());
        let (shape, base) = template(class_id);
        let size = match shape {
            Shape::Box => base.map(|s| s * rng.random_range(0.85..1.15)),
            Shape::Sphere => [base[0] * rng.random_range(0.85..1.15); 3],
        };
        let (hx, hy) = (size[0] / 2.0, size[1] / 2.0);
        if hx >= half_room || hy >= half_room {
            continue;
        }
        let center = [
            rng.random_range(-half_room + hx..half_room - hx),
            rng.random_range(-half_room + hy..half_room - hy),
            size[2] / 2.0,
        ];
        let bbox = BBox { center, size };
        if placed.iter().all(|p| footprint_gap(&p.bbox, &bbox) >= cfg.margin) {
            placed.push(Placed {
                class_id,
                color,
                shape,
                bbox,
            });
        }
    }

    let noise = Normal::new(0.0, cfg.color_noise.max(0.0)).expect("finite std");
    let mut points = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    let mut floor_tries = 0usize;
    while points.len() < n_floor {
        floor_tries += 1;
        if floor_tries > 1000 * n_floor.max(1) {
            return Err(Error::Scene("floor fully covered by objects".into()));
        }
        let p = [
            rng.random_range(-half_room..half_room),
            rng.random_range(-half_room..half_room),
            0.0,
        ];
        let covered = placed.iter().any(|o| {
            (p[0] - o.bbox.center[0]).abs() <= o.bbox.size[0] / 2.0
                && (p[1] - o.bbox.center[1]).abs() <= o.bbox.size[1] / 2.0
        });
        if !covered {
            points.push(p);
            colors.push(noisy(FLOOR_RGB, &noise, &mut rng));
        }
    }

    let mut instances = Vec::with_capacity(n_obj);
    if n_obj > 0 {
        let areas: Vec<f64> = placed.iter().map(Placed::surface_area).collect();
        let counts = allocate(n_points - n_floor, &areas);
        for (obj, count) in placed.iter().zip(counts) {
            let start = points.len();
            for _ in 0..count {
                points.push(obj.sample_surface(&mut rng));
                colors.push(noisy(COLOR_RGB[obj.color], &noise, &mut rng));
            }
            instances.push(Instance {
                point_indices: (start..points.len()).collect(),
                class_id: obj.class_id,
                bbox: obj.bbox,
                color: obj.color,
            });
        }
    }

    let mut centroid = [0.0; 3];
    for p in &points {
        for a in 0..3 {
            centroid[a] += p[a] / points.len() as f64;
        }
    }
    let scene = Scene {
        id: seed,
        points,
        colors,
        segment_ids: Vec::new(),
        instances,
        cameras: ring_cameras(centroid, cfg),
    };
    scene.validate()?;
    Ok(scene)
}

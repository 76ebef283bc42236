//! Point-splat rendering into virtual cameras and back-projection of pixel
//! features onto points and segments.

use qtensor::Tensor;

use crate::scene::{Camera, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub width: usize,
    pub height: usize,
    /// Depth along the viewing axis; infinite where nothing was hit.
    pub depth: Vec<f64>,
    /// Index of the point visible at each pixel.
    pub hit: Vec<Option<usize>>,
}

impl View {
    pub fn hits(&self) -> usize {
        self.hit.iter().filter(|h| h.is_some()).count()
    }
}

const NEAR: f64 = 1e-6;

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalized(a: Vec3) -> Vec3 {
    let n = dot(&a, &a).sqrt();
    a.map(|x| x / n)
}

/// Orthonormal camera basis (right, up, forward) with world z as up.
fn basis(cam: &Camera) -> (Vec3, Vec3, Vec3) {
    let forward = normalized(sub(&cam.look_at, &cam.position));
    let mut right = cross(&forward, &[0.0, 0.0, 1.0]);
    if dot(&right, &right) < 1e-12 {
        right = [1.0, 0.0, 0.0];
    }
    let right = normalized(right);
    let up = cross(&right, &forward);
    (right, up, forward)
}

/// Pixel (column, row) and depth of a point, if it projects in front of the camera.
pub fn project(cam: &Camera, p: &Vec3) -> Option<(i64, i64, f64)> {
    let (right, up, forward) = basis(cam);
    let rel = sub(p, &cam.position);
    let z = dot(&rel, &forward);
    if z <= NEAR {
        return None;
    }
    let focal = (cam.width as f64 / 2.0) / (cam.fov.to_radians() / 2.0).tan();
    let u = cam.width as f64 / 2.0 + focal * dot(&rel, &right) / z;
    let v = cam.height as f64 / 2.0 - focal * dot(&rel, &up) / z;
    Some((u.floor() as i64, v.floor() as i64, z))
}

/// Z-buffered splat of every point; `radius` widens each splat to a
/// `(2r+1)²` pixel square. Depth ties keep the lower point index.
pub fn render(cam: &Camera, points: &[Vec3], radius: usize) -> View {
    let (w, h) = (cam.width, cam.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut hit = vec![None; w * h];
    let r = radius as i64;
    for (i, p) in points.iter().enumerate() {
        let Some((u, v, z)) = project(cam, p) else { continue };
        for dv in -r..=r {
            for du in -r..=r {
                let (x, y) = (u + du, v + dv);
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                let idx = y as usize * w + x as usize;
                if z < depth[idx] {
                    depth[idx] = z;
                    hit[idx] = Some(i);
                }
            }
        }
    }
    View {
        width: w,
        height: h,
        depth,
        hit,
    }
}

pub fn render_views(cameras: &[Camera], points: &[Vec3], radius: usize) -> Vec<View> {
    cameras.iter().map(|c| render(c, points, radius)).collect()
}

/// Pixel feature map of a view: the feature row of the visible point, or
/// `None` for empty pixels.
pub fn pixel_features<'a>(view: &View, point_features: &'a Tensor) -> Vec<Option<&'a [f64]>> {
    view.hit.iter().map(|h| h.map(|i| point_features.row(i))).collect()
}

/// Mean pixel feature per point across all views; zero for unseen points.
pub fn backproject(views: &[View], point_features: &Tensor, n_points: usize) -> Tensor {
    let c = point_features.cols();
    let mut sum = vec![0.0; n_points * c];
    let mut count = vec![0usize; n_points];
    for view in views {
        for (pix, h) in pixel_features(view, point_features).into_iter().zip(&view.hit) {
            if let (Some(f), Some(i)) = (pix, h) {
                count[*i] += 1;
                for (s, x) in sum[i * c..(i + 1) * c].iter_mut().zip(f) {
                    *s += x;
                }
            }
        }
    }
    for (i, &k) in count.iter().enumerate() {
        if k > 0 {
            for s in &mut sum[i * c..(i + 1) * c] {
                *s /= k as f64;
            }
        }
    }
    Tensor::new(vec![n_points, c], sum).expect("sized")
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud, ProjectionConfig};
use crate::rng::{indexed, stream};

/// Parameters of the synthetic corridor scenes and their raydrop process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    pub sensor_height: f64,
    /// Corridor width range (meters).
    pub corridor_width: [f64; 2],
    /// Distance from the sensor to each end wall.
    pub corridor_length: [f64; 2],
    pub wall_height: [f64; 2],
    /// Closed scenes have unbounded walls, so every ray returns.
    pub closed: bool,
    pub box_count: [usize; 2],
    pub box_size: [f64; 2],
    /// Random yaw of the whole scene (degrees, symmetric).
    pub max_yaw_deg: f64,
    /// Base drop probability `p_d`.
    pub drop_base: f64,
    /// Range-dependent drop term `p_r`; a hit at range `r` drops with `p_d + p_r r / r_max`.
    pub drop_range: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sensor_height: 1.73,
            corridor_width: [8.0, 16.0],
            corridor_length: [20.0, 40.0],
            wall_height: [2.5, 6.0],
            closed: false,
            box_count: [2, 6],
            box_size: [0.8, 3.0],
            max_yaw_deg: 30.0,
            drop_base: 0.05,
            drop_range: 0.6,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.drop_base) || !prob(self.drop_range) || self.drop_base + self.drop_range > 1.0 {
            return Err(Error::Config(format!(
                "drop probabilities must lie in [0,1] with p_d + p_r <= 1 (got {} + {})",
                self.drop_base, self.drop_range
            )));
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !(ordered(self.corridor_width) && ordered(self.corridor_length) && ordered(self.wall_height) && ordered(self.box_size)) {
            return Err(Error::Config("scene size ranges must be positive [min, max] pairs".into()));
        }
        if self.box_count[0] > self.box_count[1] {
            return Err(Error::Config("box_count must be a [min, max] pair".into()));
        }
        if !(self.sensor_height > 0.0) {
            return Err(Error::Config("sensor_height must be positive".into()));
        }
        Ok(())
    }
}

/// Analytic surface a ray can hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    Ground,
    SideWall { sign: i8 },
    EndWall { sign: i8 },
    BoxFace { index: usize, axis: usize, sign: i8 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Aabb {
    min: Point3,
    max: Point3,
}

impl Aabb {
    fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// One concrete scene instance, expressed in a frame rotated by `yaw` from the sensor.
#[derive(Clone, Debug)]
pub struct Scene {
    yaw: f64,
    ground_z: f64,
    half_width: f64,
    front: f64,
    back: f64,
    wall_top: f64,
    boxes: Vec<Aabb>,
}

impl Scene {
    pub fn sample<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Self {
        let uniform = |rng: &mut R, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..r[1]) };
        let yaw = if spec.max_yaw_deg > 0.0 {
            rng.gen_range(-spec.max_yaw_deg..spec.max_yaw_deg).to_radians()
        } else {
            0.0
        };
        let half_width = uniform(rng, spec.corridor_width) / 2.0;
        let front = uniform(rng, spec.corridor_length);
        let back = uniform(rng, spec.corridor_length);
        let ground_z = -spec.sensor_height;
        let wall_top = if spec.closed {
            f64::INFINITY
        } else {
            ground_z + uniform(rng, spec.wall_height)
        };
        let n_boxes = rng.gen_range(spec.box_count[0]..=spec.box_count[1]);
        let mut boxes = Vec::with_capacity(n_boxes);
        for _ in 0..n_boxes {
            let sx = uniform(rng, spec.box_size);
            let sy = uniform(rng, spec.box_size).min(half_width);
            let sz = uniform(rng, spec.box_size);
            // keep a 2 m clearance around the sensor
            let cx = loop {
                let c = rng.gen_range(-back + sx / 2.0..front - sx / 2.0);
                if c.abs() > sx / 2.0 + 2.0 {
                    break c;
                }
            };
            let cy = rng.gen_range(-half_width + sy / 2.0..=half_width - sy / 2.0);
            boxes.push(Aabb {
                min: [cx - sx / 2.0, cy - sy / 2.0, ground_z],
                max: [cx + sx / 2.0, cy + sy / 2.0, ground_z + sz],
            });
        }
        Self {
            yaw,
            ground_z,
            half_width,
            front,
            back,
            wall_top,
            boxes,
        }
    }

    fn check_sensor(&self) -> Result<()> {
        let origin = [0.0; 3];
        if self.boxes.iter().any(|b| b.contains(origin))
            || self.half_width <= 0.0
            || self.ground_z >= 0.0
            || self.front <= 0.0
            || self.back <= 0.0
        {
            return Err(Error::invalid("degenerate scene: sensor inside an obstacle"));
        }
        Ok(())
    }

    fn to_scene_frame(&self, d: Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]]
    }

    /// First hit of a unit ray from the sensor, as (range, surface).
    pub fn cast(&self, dir_sensor: Point3) -> Option<(f64, Surface)> {
        let d = self.to_scene_frame(dir_sensor);
        let mut best: Option<(f64, Surface)> = None;
        let mut consider = |t: f64, s: Surface| {
            if t > 1e-9 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, s));
            }
        };
        let within_walls = |p: Point3| p[2] >= self.ground_z && p[2] <= self.wall_top;
        if d[2] < 0.0 {
            let t = self.ground_z / d[2];
            let p = at(d, t);
            if p[1].abs() <= self.half_width && p[0] <= self.front && p[0] >= -self.back {
                consider(t, Surface::Ground);
            }
        }
        for sign in [-1i8, 1] {
            let y = sign as f64 * self.half_width;
            if d[1] * sign as f64 > 0.0 {
                let t = y / d[1];
                let p = at(d, t);
                if within_walls(p) && p[0] <= self.front && p[0] >= -self.back {
                    consider(t, Surface::SideWall { sign });
                }
            }
            let x = if sign > 0 { self.front } else { -self.back };
            if d[0] * sign as f64 > 0.0 {
                let t = x / d[0];
                let p = at(d, t);
                if within_walls(p) && p[1].abs() <= self.half_width {
                    consider(t, Surface::EndWall { sign });
                }
            }
        }
        for (index, b) in self.boxes.iter().enumerate() {
            for axis in 0..3 {
                for sign in [-1i8, 1] {
                    let plane = if sign > 0 { b.max[axis] } else { b.min[axis] };
                    if d[axis] == 0.0 {
                        continue;
                    }
                    let t = plane / d[axis];
                    let p = at(d, t);
                    let inside = (0..3)
                        .filter(|&a| a != axis)
                        .all(|a| p[a] >= b.min[a] - 1e-12 && p[a] <= b.max[a] + 1e-12);
                    if inside {
                        consider(t, Surface::BoxFace { index, axis, sign });
                    }
                }
            }
        }
        best
    }

    /// Distance of a sensor-frame point from the analytic plane of `surface`.
    pub fn residual(&self, p_sensor: Point3, surface: Surface) -> f64 {
        let p = self.to_scene_frame(p_sensor);
        match surface {
            Surface::Ground => (p[2] - self.ground_z).abs(),
            Surface::SideWall { sign } => (p[1] - sign as f64 * self.half_width).abs(),
            Surface::EndWall { sign } => {
                let x = if sign > 0 { self.front } else { -self.back };
                (p[0] - x).abs()
            }
            Surface::BoxFace { index, axis, sign } => {
                let b = &self.boxes[index];
                let plane = if sign > 0 { b.max[axis] } else { b.min[axis] };
                (p[axis] - plane).abs()
            }
        }
    }
}

fn at(d: Point3, t: f64) -> Point3 {
    [d[0] * t, d[1] * t, d[2] * t]
}

/// Per-ray ground truth emitted alongside a scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayRecord {
    pub row: usize,
    pub col: usize,
    pub azimuth: f64,
    pub elevation: f64,
    /// Range and surface of the first hit inside the sensor's range bounds.
    pub hit: Option<(f64, Surface)>,
    pub dropped: bool,
}

/// A generated sweep: the surviving returns plus the full pre-drop ray table.
#[derive(Clone, Debug)]
pub struct SyntheticScan {
    pub index: u64,
    pub cloud: PointCloud,
    pub rays: Vec<RayRecord>,
    pub scene: Scene,
}

impl SyntheticScan {
    pub fn hits(&self) -> usize {
        self.rays.iter().filter(|r| r.hit.is_some()).count()
    }

    pub fn drops(&self) -> usize {
        self.rays.iter().filter(|r| r.dropped).count()
    }
}

/// Casts one ray per pixel center of `sensor`; every hit is dropped independently
/// with probability `p_d + p_r r / r_max`. Deterministic per `(spec.seed, index)`.
///
/// Surviving points are emitted row by row with their ring index, which is the
/// order scan unfolding expects.
pub fn generate_scan(spec: &SceneSpec, sensor: &ProjectionConfig, index: u64) -> Result<SyntheticScan> {
    spec.validate()?;
    sensor.validate()?;
    let mut rng = indexed(spec.seed, stream::DATA, index);
    let scene = Scene::sample(spec, &mut rng);
    scene.check_sensor()?;
    let mut rays = Vec::with_capacity(sensor.pixels());
    let mut points = Vec::new();
    let mut rings = Vec::new();
    for row in 0..sensor.height {
        let elevation = sensor.elevation_center(row);
        let (sp, cp) = elevation.sin_cos();
        for col in 0..sensor.width {
            let azimuth = sensor.azimuth_center(col);
            let (st, ct) = azimuth.sin_cos();
            let dir = [cp * ct, cp * st, sp];
            let hit = scene
                .cast(dir)
                .filter(|(r, _)| *r >= sensor.range_min && *r <= sensor.range_max);
            // one draw per ray keeps the stream aligned regardless of geometry
            let u: f64 = rng.gen();
            let dropped = match hit {
                Some((r, _)) => u < spec.drop_base + spec.drop_range * r / sensor.range_max,
                None => false,
            };
            if let (Some((r, _)), false) = (hit, dropped) {
                points.push(at(dir, r));
                rings.push(row as u32);
            }
            rays.push(RayRecord {
                row,
                col,
                azimuth,
                elevation,
                hit,
                dropped,
            });
        }
    }
    let cloud = PointCloud::new(points)?.with_rings(rings)?;
    Ok(SyntheticScan {
        index,
        cloud,
        rays,
        scene,
    })
}

//! Synthetic indoor-style scenes built from labeled geometric primitives.
//!
//! Each scene is a ground plane (background, label 0) plus a requested
//! number of instances of each primitive class in the configured
//! universe: vertical plane sheets, axis-aligned boxes, upright
//! cylinders, and axis-aligned wedge prisms. Labels and colors follow
//! universe positions, so scenes hosting different class subsets stay
//! mutually consistent. Points are drawn area-uniformly on each
//! surface and optionally deformed with Gaussian noise, standing in for
//! scanned rooms so the few-shot pipeline can be exercised end to end.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Used by the no_std build; the test harness links `std`, whose inherent
// float methods shadow the trait.
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};
use crate::rng;

/// Primitive generator kinds; their names define the class universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrimitiveKind {
    Plane,
    Box,
    Cylinder,
    Wedge,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::Plane,
        PrimitiveKind::Box,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Wedge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Plane => "plane",
            PrimitiveKind::Box => "box",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Wedge => "wedge",
        }
    }

    pub fn from_name(name: &str) -> Option<PrimitiveKind> {
        PrimitiveKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Recipe for one synthetic scene.
///
/// The class with universe position `i` is labeled `i + 1`; label 0 is
/// the background ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Class universe; labels and colors are fixed by list position even
    /// when a class has zero instances in this particular scene.
    pub classes: Vec<PrimitiveKind>,
    /// Per-class size range in meters (uniform per instance dimension).
    pub scale_ranges: Vec<(f64, f64)>,
    /// Std of the Gaussian surface deformation, meters.
    pub deform_amplitude: f64,
    /// Total points in the scene, background included.
    pub points_per_scene: usize,
    /// Scene xy footprint is `[0, extent] x [0, extent]` meters.
    pub extent: f64,
    /// Instances of each class, position-matched to `classes`; a zero
    /// leaves that class out of this scene.
    pub instances: Vec<usize>,
    /// Fraction of points assigned to the background ground plane.
    pub background_fraction: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Desk-scale default: all four classes in a small scene suited to
    /// 512-point blocks.
    pub fn desk(seed: u64) -> SceneSpec {
        SceneSpec {
            classes: PrimitiveKind::ALL.to_vec(),
            scale_ranges: vec![(1.0, 2.4); 4],
            deform_amplitude: 0.02,
            points_per_scene: 8192,
            extent: 8.0,
            instances: vec![2; 4],
            background_fraction: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("scene class universe is empty".into()));
        }
        if self.scale_ranges.len() != self.classes.len() {
            return Err(Error::Config(format!(
                "{} classes but {} scale ranges",
                self.classes.len(),
                self.scale_ranges.len()
            )));
        }
        if self.instances.len() != self.classes.len() {
            return Err(Error::Config(format!(
                "{} classes but {} instance counts",
                self.classes.len(),
                self.instances.len()
            )));
        }
        for &(lo, hi) in &self.scale_ranges {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!(
                    "scale range [{lo}, {hi}] must satisfy 0 < lo <= hi"
                )));
            }
        }
        if !(self.deform_amplitude >= 0.0) {
            return Err(Error::Config("deform_amplitude must be >= 0".into()));
        }
        if self.points_per_scene == 0 {
            return Err(Error::Config("points_per_scene must be >= 1".into()));
        }
        if !(self.extent > 0.0) {
            return Err(Error::Config("extent must be > 0".into()));
        }
        let max_hi = self.scale_ranges.iter().map(|r| r.1).fold(0.0, f64::max);
        if self.extent <= max_hi {
            return Err(Error::Config(format!(
                "extent {} too small for scale range up to {max_hi}",
                self.extent
            )));
        }
        if self.instances.iter().sum::<usize>() == 0 {
            return Err(Error::Config("scene instantiates no objects".into()));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::Config("background_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Location of one object's points inside the generated scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceInfo {
    pub kind: PrimitiveKind,
    /// Semantic label of the instance (universe position + 1).
    pub label: usize,
    /// First point index in the scene cloud.
    pub start: usize,
    /// Number of points belonging to the instance.
    pub count: usize,
}

/// A generated scene together with its per-instance point layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: LabeledCloud,
    pub instances: Vec<InstanceInfo>,
}

/// Nominal display color of a class, used both as the point color signal
/// and as the basis of the visualization palette.
pub fn class_base_color(label: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 8] = [
        [0.50, 0.50, 0.50], // background
        [0.85, 0.30, 0.30],
        [0.30, 0.55, 0.85],
        [0.35, 0.75, 0.35],
        [0.85, 0.70, 0.25],
        [0.65, 0.40, 0.80],
        [0.30, 0.75, 0.75],
        [0.80, 0.45, 0.60],
    ];
    PALETTE[label % PALETTE.len()]
}

/// Generates a deterministic scene: each universe class is instantiated
/// its requested number of times on a background ground plane.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);

    let n_total = spec.points_per_scene;
    let n_bg = ((n_total as f64) * spec.background_fraction) as usize;
    let n_instances: usize = spec.instances.iter().sum();
    let n_fg = n_total - n_bg;
    if n_fg < n_instances {
        return Err(Error::Config(format!(
            "{n_fg} foreground points cannot cover {n_instances} instances"
        )));
    }

    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(n_total);
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(n_total);
    let mut labels: Vec<usize> = Vec::with_capacity(n_total);
    let mut instances: Vec<InstanceInfo> = Vec::with_capacity(n_instances);

    let base = n_fg / n_instances;
    let extra = n_fg % n_instances;
    let mut placed = 0usize;
    let mut inst_index = 0usize;
    for (ci, &kind) in spec.classes.iter().enumerate() {
        let label = ci + 1;
        let (lo, hi) = spec.scale_ranges[ci];
        for _ in 0..spec.instances[ci] {
            let n_points = base + usize::from(inst_index < extra);
            let dims = [
                rng.gen_range(lo..=hi),
                rng.gen_range(lo..=hi),
                rng.gen_range(lo..=hi),
            ];
            let margin = 0.5 * dims.iter().copied().fold(0.0, f64::max);
            let cx = rng.gen_range(margin..=(spec.extent - margin));
            let cy = rng.gen_range(margin..=(spec.extent - margin));
            // Sheets get a free heading; boxes and wedges stay
            // axis-aligned so instance sizes are directly observable
            // from bounding boxes.
            let yaw = match kind {
                PrimitiveKind::Plane => rng.gen_range(0.0..core::f64::consts::TAU),
                _ => 0.0,
            };
            let start = coords.len();
            for _ in 0..n_points {
                let local = sample_surface_point(kind, dims, &mut rng);
                let (sin, cos) = yaw.sin_cos();
                coords.push([
                    cx + cos * local[0] - sin * local[1],
                    cy + sin * local[0] + cos * local[1],
                    local[2],
                ]);
                colors.push(vary_color(class_base_color(label), &mut rng));
                labels.push(label);
            }
            instances.push(InstanceInfo { kind, label, start, count: n_points });
            placed += n_points;
            inst_index += 1;
        }
    }
    debug_assert_eq!(placed, n_fg);

    for _ in 0..n_bg {
        coords.push([
            rng.gen_range(0.0..spec.extent),
            rng.gen_range(0.0..spec.extent),
            0.0,
        ]);
        colors.push(vary_color(class_base_color(0), &mut rng));
        labels.push(0);
    }

    if spec.deform_amplitude > 0.0 {
        let normal = Normal::new(0.0, spec.deform_amplitude)
            .map_err(|e| Error::Config(format!("invalid deformation: {e}")))?;
        for p in &mut coords {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let cloud = LabeledCloud::new(coords, Some(colors), labels)?;
    Ok(Scene { cloud, instances })
}

fn vary_color(base: [f64; 3], rng: &mut rng::Rng) -> [f64; 3] {
    let mut c = base;
    for v in c.iter_mut() {
        *v = (*v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
    }
    c
}

/// One area-uniform point on the primitive surface, in the local frame:
/// centered in xy, resting on z = 0.
fn sample_surface_point(kind: PrimitiveKind, dims: [f64; 3], rng: &mut rng::Rng) -> [f64; 3] {
    let [dx, dy, dz] = dims;
    match kind {
        PrimitiveKind::Plane => {
            // Vertical sheet: width dx, height dz, zero thickness.
            [rng.gen_range(-0.5 * dx..=0.5 * dx), 0.0, rng.gen_range(0.0..=dz)]
        }
        PrimitiveKind::Box => {
            // Cuboid surface, area-weighted over the six faces.
            let a_xy = dx * dy;
            let a_xz = dx * dz;
            let a_yz = dy * dz;
            let total = 2.0 * (a_xy + a_xz + a_yz);
            let mut t = rng.gen_range(0.0..total);
            let u = rng.gen_range(0.0..1.0);
            let v = rng.gen_range(0.0..1.0);
            for (face, area) in [
                (0, a_xy), // bottom
                (1, a_xy), // top
                (2, a_xz), // front (y = -dy/2)
                (3, a_xz), // back
                (4, a_yz), // left (x = -dx/2)
                (5, a_yz), // right
            ] {
                if t < area || face == 5 {
                    let x = (u - 0.5) * dx;
                    let y = (v - 0.5) * dy;
                    return match face {
                        0 => [x, y, 0.0],
                        1 => [x, y, dz],
                        2 => [x, -0.5 * dy, v * dz],
                        3 => [x, 0.5 * dy, v * dz],
                        4 => [-0.5 * dx, y, u * dz],
                        _ => [0.5 * dx, y, u * dz],
                    };
                }
                t -= area;
            }
            unreachable!()
        }
        PrimitiveKind::Cylinder => {
            // Upright cylinder: diameter dx, height dz; lateral + caps.
            let r = 0.5 * dx;
            let a_lateral = core::f64::consts::TAU * r * dz;
            let a_cap = core::f64::consts::PI * r * r;
            let t = rng.gen_range(0.0..(a_lateral + 2.0 * a_cap));
            let theta = rng.gen_range(0.0..core::f64::consts::TAU);
            if t < a_lateral {
                [r * theta.cos(), r * theta.sin(), rng.gen_range(0.0..=dz)]
            } else {
                let rr = r * rng.gen_range(0.0f64..1.0).sqrt();
                let z = if t < a_lateral + a_cap { 0.0 } else { dz };
                [rr * theta.cos(), rr * theta.sin(), z]
            }
        }
        PrimitiveKind::Wedge => {
            // Triangular prism: right triangle (base dx, rise dz) in the
            // xz plane, extruded along y over dy. Resting on z = 0 with
            // the vertical face at x = -dx/2.
            let hyp = (dx * dx + dz * dz).sqrt();
            let a_bottom = dx * dy;
            let a_back = dz * dy;
            let a_slope = hyp * dy;
            let a_cap = 0.5 * dx * dz;
            let total = a_bottom + a_back + a_slope + 2.0 * a_cap;
            let mut t = rng.gen_range(0.0..total);
            let u = rng.gen_range(0.0..1.0);
            let v = rng.gen_range(0.0..1.0);
            let y = (v - 0.5) * dy;
            if t < a_bottom {
                return [(u - 0.5) * dx, y, 0.0];
            }
            t -= a_bottom;
            if t < a_back {
                return [-0.5 * dx, y, u * dz];
            }
            t -= a_back;
            if t < a_slope {
                // From the apex (-dx/2, dz) down to the toe (dx/2, 0).
                return [(u - 0.5) * dx, y, (1.0 - u) * dz];
            }
            // Triangular end caps at y = +-dy/2: uniform in the triangle
            // via reflection of the unit-square draw.
            let (mut a, mut b) = (u, v);
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            let yy = if t - a_slope < a_cap { -0.5 * dy } else { 0.5 * dy };
            [-0.5 * dx + a * dx, yy, b * dz]
        }
    }
}

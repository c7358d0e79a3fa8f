//! Synthetic intersection worlds and the geometric perception front-end.
//!
//! A world is a four-arm intersection on an H×W grid with optional corner
//! buildings, vehicles (the detection targets) on the road lanes, one ego
//! vehicle and N collaborators. Each unit's initial confidence map follows
//! from line-of-sight visibility plus noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{BinaryMap, ConfidenceMap};
use crate::rng::{derive_seed, SimRng};
use rand::SeedableRng;

/// Confidence levels and noise of the perception surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceModel {
    pub base_hit: f64,
    pub base_miss: f64,
    pub prior: f64,
    pub noise_std: f64,
    pub false_positive_prob: f64,
    pub false_positive_low: f64,
    pub false_positive_high: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            base_hit: 0.9,
            base_miss: 0.05,
            prior: 0.05,
            noise_std: 0.03,
            false_positive_prob: 0.01,
            false_positive_low: 0.5,
            false_positive_high: 0.9,
        }
    }
}

impl ConfidenceModel {
    pub fn noiseless() -> Self {
        Self {
            noise_std: 0.0,
            false_positive_prob: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub cell_size_m: f64,
    pub n_collaborators: usize,
    /// Flag the last collaborator as a roadside unit.
    pub include_rsu: bool,
    pub objects_min: usize,
    pub objects_max: usize,
    pub object_length_cells: usize,
    pub object_width_cells: usize,
    pub road_half_width_cells: usize,
    /// Probability that each intersection corner holds a building block.
    pub occluder_density: f64,
    pub sensor_range_m: f64,
    pub max_speed_kmh: f64,
    pub force_occlusion: bool,
    pub confidence: ConfidenceModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            grid_h: 64,
            grid_w: 64,
            cell_size_m: 1.0,
            n_collaborators: 4,
            include_rsu: true,
            objects_min: 10,
            objects_max: 18,
            object_length_cells: 4,
            object_width_cells: 2,
            road_half_width_cells: 6,
            occluder_density: 0.75,
            sensor_range_m: 40.0,
            max_speed_kmh: 25.0,
            force_occlusion: true,
            confidence: ConfidenceModel::default(),
        }
    }
}

impl ScenarioConfig {
    fn road_cells(&self) -> usize {
        let rw = 2 * self.road_half_width_cells;
        let (h, w) = (self.grid_h, self.grid_w);
        (rw.min(h) * w + rw.min(w) * h).saturating_sub(rw.min(h) * rw.min(w))
    }

    /// Largest object count the road area can hold at half packing density.
    pub fn object_capacity(&self) -> usize {
        let area = (self.object_length_cells * self.object_width_cells).max(1);
        self.road_cells() / (2 * area)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_h < 8 || self.grid_w < 8 {
            return Err(Error::config("scenario grid must be at least 8x8"));
        }
        if self.n_collaborators == 0 {
            return Err(Error::config("scenario.n_collaborators must be >= 1"));
        }
        if !(self.cell_size_m > 0.0) {
            return Err(Error::config("scenario.cell_size_m must be > 0"));
        }
        if self.objects_min > self.objects_max {
            return Err(Error::config("scenario.objects_min exceeds objects_max"));
        }
        if self.objects_max > self.object_capacity() {
            return Err(Error::config(format!(
                "scenario.objects_max = {} exceeds grid capacity {}",
                self.objects_max,
                self.object_capacity()
            )));
        }
        if 2 * self.road_half_width_cells + 2 > self.grid_h.min(self.grid_w) {
            return Err(Error::config("scenario roads do not fit in the grid"));
        }
        if !(0.0..=1.0).contains(&self.occluder_density) {
            return Err(Error::config("scenario.occluder_density must lie in [0, 1]"));
        }
        if !(self.max_speed_kmh >= 0.0 && self.max_speed_kmh <= 25.0) {
            return Err(Error::config("scenario.max_speed_kmh must lie in [0, 25]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    /// Metres, grid frame.
    pub position: (f64, f64),
    pub speed_mps: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    pub is_rsu: bool,
    pub sensor_range_m: f64,
}

impl UnitState {
    pub fn velocity(&self) -> (f64, f64) {
        (
            self.speed_mps * self.heading.cos(),
            self.speed_mps * self.heading.sin(),
        )
    }

    pub fn distance_to(&self, other: &UnitState) -> f64 {
        let dx = self.position.0 - other.position.0;
        let dy = self.position.1 - other.position.1;
        dx.hypot(dy)
    }

    pub fn relative_speed(&self, other: &UnitState) -> f64 {
        let (ax, ay) = self.velocity();
        let (bx, by) = other.velocity();
        (ax - bx).hypot(ay - by)
    }
}

/// Axis-aligned vehicle footprint; the min corner moves continuously and the
/// covered cells follow by rounding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub min_corner_m: (f64, f64),
    pub size_cells: (usize, usize),
    pub velocity_mps: (f64, f64),
}

/// Static opaque block (building), in cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl CellRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }

    fn overlaps(&self, other: &CellRect) -> bool {
        self.x0 < other.x0 + other.w
            && other.x0 < self.x0 + self.w
            && self.y0 < other.y0 + other.h
            && other.y0 < self.y0 + self.h
    }

    fn grown(&self, margin: usize) -> CellRect {
        CellRect {
            x0: self.x0.saturating_sub(margin),
            y0: self.y0.saturating_sub(margin),
            w: self.w + 2 * margin,
            h: self.h + 2 * margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWorld {
    pub grid_h: usize,
    pub grid_w: usize,
    pub cell_size_m: f64,
    /// Index 0 is the ego vehicle; 1..=N are collaborators.
    pub units: Vec<UnitState>,
    pub objects: Vec<ObjectBox>,
    pub buildings: Vec<CellRect>,
    pub gt_map: BinaryMap,
}

impl ScenarioWorld {
    pub fn n_collaborators(&self) -> usize {
        self.units.len() - 1
    }

    pub fn ego(&self) -> &UnitState {
        &self.units[0]
    }

    pub fn object_rect(&self, obj: &ObjectBox) -> CellRect {
        let cs = self.cell_size_m;
        let (sw, sh) = obj.size_cells;
        let x0 = ((obj.min_corner_m.0 / cs).round().max(0.0) as usize).min(self.grid_w - sw);
        let y0 = ((obj.min_corner_m.1 / cs).round().max(0.0) as usize).min(self.grid_h - sh);
        CellRect { x0, y0, w: sw, h: sh }
    }

    /// All opaque rectangles: objects first (ids `0..objects.len()`), then buildings.
    pub fn opaque_rects(&self) -> Vec<CellRect> {
        self.objects
            .iter()
            .map(|o| self.object_rect(o))
            .chain(self.buildings.iter().cloned())
            .collect()
    }

    fn rebuild_gt(&mut self) {
        let mut gt = BinaryMap::empty(self.grid_h, self.grid_w);
        for r in self.objects.iter().map(|o| self.object_rect(o)) {
            for y in r.y0..r.y0 + r.h {
                for x in r.x0..r.x0 + r.w {
                    gt.set(x, y, true);
                }
            }
        }
        self.gt_map = gt;
    }

    /// Per-cell opaque owner (index into [`Self::opaque_rects`]), or `None`.
    fn owner_grid(&self) -> Vec<Option<u32>> {
        let mut owner = vec![None; self.grid_h * self.grid_w];
        for (id, r) in self.opaque_rects().iter().enumerate() {
            for y in r.y0..(r.y0 + r.h).min(self.grid_h) {
                for x in r.x0..(r.x0 + r.w).min(self.grid_w) {
                    owner[y * self.grid_w + x].get_or_insert(id as u32);
                }
            }
        }
        owner
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }
}

fn lane_heading(horizontal: bool, positive: bool) -> f64 {
    match (horizontal, positive) {
        (true, true) => 0.0,
        (true, false) => std::f64::consts::PI,
        (false, true) => std::f64::consts::FRAC_PI_2,
        (false, false) => -std::f64::consts::FRAC_PI_2,
    }
}

struct Layout {
    xc: usize,
    yc: usize,
    rw: usize,
}

impl Layout {
    fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            xc: cfg.grid_w / 2,
            yc: cfg.grid_h / 2,
            rw: cfg.road_half_width_cells,
        }
    }

    fn on_road(&self, x: usize, y: usize) -> bool {
        (x >= self.xc - self.rw && x < self.xc + self.rw)
            || (y >= self.yc - self.rw && y < self.yc + self.rw)
    }

    fn rect_on_road(&self, r: &CellRect) -> bool {
        (r.y0..r.y0 + r.h).all(|y| (r.x0..r.x0 + r.w).all(|x| self.on_road(x, y)))
    }

    /// Random point on a lane: (metres, heading).
    fn lane_point<R: Rng>(&self, cfg: &ScenarioConfig, rng: &mut R) -> ((f64, f64), f64) {
        let horizontal = rng.gen_bool(0.5);
        let positive = rng.gen_bool(0.5);
        let cs = cfg.cell_size_m;
        let rw = self.rw as f64;
        // Right-hand traffic: positive direction uses the lane on the right.
        let lateral = if positive { -rng.gen_range(0.5..rw - 0.5) } else { rng.gen_range(0.5..rw - 0.5) };
        let along_max = if horizontal { cfg.grid_w } else { cfg.grid_h } as f64;
        let along = rng.gen_range(1.0..along_max - 1.0);
        let (x, y) = if horizontal {
            (along, self.yc as f64 + lateral)
        } else {
            (self.xc as f64 - lateral, along)
        };
        ((x * cs, y * cs), lane_heading(horizontal, positive))
    }
}

fn cell_of(pos_m: (f64, f64), cs: f64, h: usize, w: usize) -> (usize, usize) {
    let x = ((pos_m.0 / cs).floor().max(0.0) as usize).min(w - 1);
    let y = ((pos_m.1 / cs).floor().max(0.0) as usize).min(h - 1);
    (x, y)
}

fn place_buildings<R: Rng>(cfg: &ScenarioConfig, lay: &Layout, rng: &mut R) -> Vec<CellRect> {
    let mut out = Vec::new();
    let gap = 1;
    for (east, north) in [(true, true), (false, true), (false, false), (true, false)] {
        if !rng.gen_bool(cfg.occluder_density) {
            continue;
        }
        let room_x = if east { cfg.grid_w - (lay.xc + lay.rw + gap) } else { lay.xc - lay.rw - gap };
        let room_y = if north { cfg.grid_h - (lay.yc + lay.rw + gap) } else { lay.yc - lay.rw - gap };
        if room_x < 3 || room_y < 3 {
            continue;
        }
        let w = rng.gen_range(room_x / 3..=room_x * 2 / 3).max(2);
        let h = rng.gen_range(room_y / 3..=room_y * 2 / 3).max(2);
        let x0 = if east { lay.xc + lay.rw + gap } else { lay.xc - lay.rw - gap - w };
        let y0 = if north { lay.yc + lay.rw + gap } else { lay.yc - lay.rw - gap - h };
        out.push(CellRect { x0, y0, w, h });
    }
    out
}

fn place_units<R: Rng>(cfg: &ScenarioConfig, lay: &Layout, rng: &mut R) -> Vec<UnitState> {
    let max_speed = cfg.max_speed_kmh / 3.6;
    let cs = cfg.cell_size_m;
    let mut units: Vec<UnitState> = Vec::with_capacity(cfg.n_collaborators + 1);

    // Ego approaches the intersection on one of the arms.
    let arm = rng.gen_range(0..4);
    let dist = rng.gen_range(lay.rw as f64 + 2.0..lay.rw as f64 + 10.0);
    let lateral = rng.gen_range(0.5..lay.rw as f64 - 0.5);
    let (xc, yc) = (lay.xc as f64, lay.yc as f64);
    let (pos, heading) = match arm {
        0 => ((xc + lateral, yc - dist), std::f64::consts::FRAC_PI_2),
        1 => ((xc - lateral, yc + dist), -std::f64::consts::FRAC_PI_2),
        2 => ((xc - dist, yc - lateral), 0.0),
        _ => ((xc + dist, yc + lateral), std::f64::consts::PI),
    };
    units.push(UnitState {
        position: (pos.0 * cs, pos.1 * cs),
        speed_mps: rng.gen_range(0.0..=max_speed),
        heading,
        is_rsu: false,
        sensor_range_m: cfg.sensor_range_m,
    });

    let n_cav = if cfg.include_rsu { cfg.n_collaborators - 1 } else { cfg.n_collaborators };
    let min_sep = 6.0 * cs;
    for _ in 0..n_cav {
        let mut cand = lay.lane_point(cfg, rng);
        for _ in 0..200 {
            if units.iter().all(|u| {
                (u.position.0 - cand.0 .0).hypot(u.position.1 - cand.0 .1) >= min_sep
            }) {
                break;
            }
            cand = lay.lane_point(cfg, rng);
        }
        units.push(UnitState {
            position: cand.0,
            speed_mps: rng.gen_range(0.0..=max_speed),
            heading: cand.1,
            is_rsu: false,
            sensor_range_m: cfg.sensor_range_m,
        });
    }
    if cfg.include_rsu {
        let east = rng.gen_bool(0.5);
        let north = rng.gen_bool(0.5);
        let off = lay.rw as f64 + 0.5;
        let x = if east { xc + off } else { xc - off };
        let y = if north { yc + off } else { yc - off };
        units.push(UnitState {
            position: (x * cs, y * cs),
            speed_mps: 0.0,
            heading: 0.0,
            is_rsu: true,
            sensor_range_m: cfg.sensor_range_m,
        });
    }
    units
}

fn place_objects<R: Rng>(
    cfg: &ScenarioConfig,
    lay: &Layout,
    units: &[UnitState],
    buildings: &[CellRect],
    count: usize,
    rng: &mut R,
) -> Vec<ObjectBox> {
    let cs = cfg.cell_size_m;
    let max_speed = cfg.max_speed_kmh / 3.6;
    let unit_cells: Vec<CellRect> = units
        .iter()
        .map(|u| {
            let (x, y) = cell_of(u.position, cs, cfg.grid_h, cfg.grid_w);
            CellRect { x0: x, y0: y, w: 1, h: 1 }.grown(1)
        })
        .collect();
    let mut placed: Vec<CellRect> = Vec::new();
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..500 {
            let ((x, y), heading) = lay.lane_point(cfg, rng);
            let horizontal = heading.sin().abs() < 0.5;
            let (sw, sh) = if horizontal {
                (cfg.object_length_cells, cfg.object_width_cells)
            } else {
                (cfg.object_width_cells, cfg.object_length_cells)
            };
            let cx = (x / cs - sw as f64 / 2.0).round();
            let cy = (y / cs - sh as f64 / 2.0).round();
            if cx < 0.0 || cy < 0.0 {
                continue;
            }
            let rect = CellRect { x0: cx as usize, y0: cy as usize, w: sw, h: sh };
            if rect.x0 + sw > cfg.grid_w || rect.y0 + sh > cfg.grid_h {
                continue;
            }
            if !lay.rect_on_road(&rect)
                || placed.iter().any(|p| p.grown(1).overlaps(&rect))
                || buildings.iter().any(|b| b.overlaps(&rect))
                || unit_cells.iter().any(|u| u.overlaps(&rect))
            {
                continue;
            }
            let speed = rng.gen_range(0.0..=max_speed);
            placed.push(rect.clone());
            objects.push(ObjectBox {
                min_corner_m: (rect.x0 as f64 * cs, rect.y0 as f64 * cs),
                size_cells: (sw, sh),
                velocity_mps: (speed * heading.cos(), speed * heading.sin()),
            });
            break;
        }
    }
    objects
}

fn has_hidden_object(world: &ScenarioWorld) -> bool {
    let vis = visibility_map(world.ego(), world);
    let ego = world.ego();
    let cs = world.cell_size_m;
    world.gt_map.ones().any(|i| {
        let (x, y) = (i % world.grid_w, i / world.grid_w);
        let d = ((x as f64 + 0.5) * cs - ego.position.0).hypot((y as f64 + 0.5) * cs - ego.position.1);
        d <= ego.sensor_range_m && !vis.bits()[i]
    })
}

/// Deterministic world from `(cfg, seed)`.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioWorld> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let attempts = if cfg.force_occlusion { 64 } else { 1 };
    let mut last = None;
    for attempt in 0..attempts {
        let mut rng = SimRng::seed_from_u64(derive_seed(seed, "world", attempt));
        let buildings = place_buildings(cfg, &lay, &mut rng);
        let units = place_units(cfg, &lay, &mut rng);
        let count = rng.gen_range(cfg.objects_min..=cfg.objects_max);
        let objects = place_objects(cfg, &lay, &units, &buildings, count, &mut rng);
        let mut world = ScenarioWorld {
            grid_h: cfg.grid_h,
            grid_w: cfg.grid_w,
            cell_size_m: cfg.cell_size_m,
            units,
            objects,
            buildings,
            gt_map: BinaryMap::empty(cfg.grid_h, cfg.grid_w),
        };
        world.rebuild_gt();
        if !cfg.force_occlusion || has_hidden_object(&world) {
            return Ok(world);
        }
        last = Some(world);
    }
    // Could not find an occluded target by chance: hide one behind a blocker
    // placed along the ego's line of sight.
    let mut world = last.expect("at least one attempt");
    force_hidden_target(&mut world, cfg)?;
    Ok(world)
}

fn force_hidden_target(world: &mut ScenarioWorld, cfg: &ScenarioConfig) -> Result<()> {
    let cs = world.cell_size_m;
    let ego = world.ego().clone();
    let (dx, dy) = (ego.heading.cos(), ego.heading.sin());
    let (sw, sh) = (2usize, 2usize);
    for near in 3..12 {
        let far = near + 4;
        let rects: Vec<CellRect> = [near, far]
            .iter()
            .map(|&k| {
                let px = ego.position.0 / cs + dx * k as f64 - sw as f64 / 2.0;
                let py = ego.position.1 / cs + dy * k as f64 - sh as f64 / 2.0;
                CellRect {
                    x0: px.round().max(0.0) as usize,
                    y0: py.round().max(0.0) as usize,
                    w: sw,
                    h: sh,
                }
            })
            .collect();
        if rects.iter().any(|r| r.x0 + r.w > world.grid_w || r.y0 + r.h > world.grid_h) {
            continue;
        }
        let mut trial = world.clone();
        trial.objects.retain(|o| {
            let r = world.object_rect(o);
            !rects.iter().any(|n| n.grown(1).overlaps(&r))
        });
        for r in &rects {
            trial.objects.push(ObjectBox {
                min_corner_m: (r.x0 as f64 * cs, r.y0 as f64 * cs),
                size_cells: (r.w, r.h),
                velocity_mps: (0.0, 0.0),
            });
        }
        trial.rebuild_gt();
        if has_hidden_object(&trial) {
            *world = trial;
            return Ok(());
        }
    }
    Err(Error::config(format!(
        "could not construct an occluded target for grid {}x{}",
        cfg.grid_w, cfg.grid_h
    )))
}

/// Line-of-sight visibility of every cell from `unit`.
///
/// A cell is visible when its centre is within sensor range and the segment
/// from the unit to that centre passes through no opaque cell other than
/// cells of the target's own footprint. Traversal is a 2D DDA over the grid.
pub fn visibility_map(unit: &UnitState, world: &ScenarioWorld) -> BinaryMap {
    let (h, w) = (world.grid_h, world.grid_w);
    let cs = world.cell_size_m;
    let owner = world.owner_grid();
    let (ux, uy) = (unit.position.0 / cs, unit.position.1 / cs);
    let start = cell_of(unit.position, cs, h, w);
    let mut vis = BinaryMap::empty(h, w);
    let range = unit.sensor_range_m;

    for ty in 0..h {
        for tx in 0..w {
            let (cx, cy) = (tx as f64 + 0.5, ty as f64 + 0.5);
            if ((cx - ux) * cs).hypot((cy - uy) * cs) > range {
                continue;
            }
            let target_owner = owner[ty * w + tx];
            if ray_clear(ux, uy, start, (cx, cy), (tx, ty), &owner, target_owner, w) {
                vis.set(tx, ty, true);
            }
        }
    }
    vis
}

#[allow(clippy::too_many_arguments)]
fn ray_clear(
    ux: f64,
    uy: f64,
    start: (usize, usize),
    end: (f64, f64),
    target: (usize, usize),
    owner: &[Option<u32>],
    target_owner: Option<u32>,
    w: usize,
) -> bool {
    let (dx, dy) = (end.0 - ux, end.1 - uy);
    let (mut x, mut y) = (start.0 as isize, start.1 as isize);
    let (tx, ty) = (target.0 as isize, target.1 as isize);
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        ((x + 1) as f64 - ux) * t_delta_x
    } else if dx < 0.0 {
        (ux - x as f64) * t_delta_x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((y + 1) as f64 - uy) * t_delta_y
    } else if dy < 0.0 {
        (uy - y as f64) * t_delta_y
    } else {
        f64::INFINITY
    };
    let limit = 2 * (w + owner.len() / w.max(1)) + 4;
    for _ in 0..limit {
        if x == tx && y == ty {
            return true;
        }
        if t_max_x.is_finite() && (t_max_x - t_max_y).abs() <= 1e-12 * t_max_x.max(1.0) {
            // Exactly through a lattice corner: the two side cells are only touched.
            x += step_x;
            y += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            x += step_x;
            t_max_x += t_delta_x;
        } else {
            y += step_y;
            t_max_y += t_delta_y;
        }
        if x < 0 || y < 0 || x as usize >= w || (y as usize) * w >= owner.len() {
            return false;
        }
        if let Some(o) = owner[y as usize * w + x as usize] {
            if Some(o) != target_owner {
                return false;
            }
        }
    }
    x == tx && y == ty
}

/// Initial spatial confidence map of `unit`.
pub fn initial_confidence<R: Rng + ?Sized>(
    unit: &UnitState,
    world: &ScenarioWorld,
    model: &ConfidenceModel,
    rng: &mut R,
) -> ConfidenceMap {
    let vis = visibility_map(unit, world);
    confidence_from_visibility(&vis, &world.gt_map, model, rng)
}

/// Confidence map for a known visibility mask.
pub fn confidence_from_visibility<R: Rng + ?Sized>(
    vis: &BinaryMap,
    gt: &BinaryMap,
    model: &ConfidenceModel,
    rng: &mut R,
) -> ConfidenceMap {
    let (h, w) = gt.dims();
    let mut values = Vec::with_capacity(h * w);
    for (&seen, &occupied) in vis.bits().iter().zip(gt.bits()) {
        let mut v = match (seen, occupied) {
            (true, true) => model.base_hit,
            (true, false) => model.base_miss,
            (false, _) => model.prior,
        };
        if model.noise_std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += model.noise_std * z;
        }
        if seen && !occupied && model.false_positive_prob > 0.0 && rng.gen_bool(model.false_positive_prob) {
            v = rng.gen_range(model.false_positive_low..=model.false_positive_high);
        }
        values.push(v.clamp(0.01, 0.99));
    }
    ConfidenceMap::from_values(h, w, values).expect("dims match")
}

fn reflect(pos: f64, vel: f64, lo: f64, hi: f64) -> (f64, f64) {
    let mut p = pos;
    let mut v = vel;
    for _ in 0..8 {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            break;
        }
    }
    (p.clamp(lo, hi), v)
}

/// Advance every moving unit and object by `interval_s`, reflecting at the
/// grid border. Roadside units stay put.
pub fn step_mobility(world: &ScenarioWorld, interval_s: f64) -> ScenarioWorld {
    let mut next = world.clone();
    let cs = world.cell_size_m;
    let (wm, hm) = (world.grid_w as f64 * cs, world.grid_h as f64 * cs);
    let margin = 0.5 * cs;
    for u in next.units.iter_mut().filter(|u| !u.is_rsu && u.speed_mps > 0.0) {
        let (vx, vy) = u.velocity();
        let (x, vx) = reflect(u.position.0 + vx * interval_s, vx, margin, wm - margin);
        let (y, vy) = reflect(u.position.1 + vy * interval_s, vy, margin, hm - margin);
        u.position = (x, y);
        u.heading = vy.atan2(vx);
    }
    for o in next.objects.iter_mut() {
        let (vx, vy) = o.velocity_mps;
        let max_x = wm - o.size_cells.0 as f64 * cs;
        let max_y = hm - o.size_cells.1 as f64 * cs;
        let (x, vx) = reflect(o.min_corner_m.0 + vx * interval_s, vx, 0.0, max_x);
        let (y, vy) = reflect(o.min_corner_m.1 + vy * interval_s, vy, 0.0, max_y);
        o.min_corner_m = (x, y);
        o.velocity_mps = (vx, vy);
    }
    next.rebuild_gt();
    next
}

/// A reproducible family of worlds: entry `k` is generated from a sub-seed
/// of the pool seed, so pools never need to be stored.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioPool {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub size: usize,
}

impl ScenarioPool {
    pub fn new(cfg: ScenarioConfig, seed: u64, size: usize) -> Result<Self> {
        cfg.validate()?;
        if size == 0 {
            return Err(Error::config("scenario pool must not be empty"));
        }
        Ok(Self { cfg, seed, size })
    }

    pub fn world(&self, k: usize) -> Result<ScenarioWorld> {
        generate_scenario(&self.cfg, derive_seed(self.seed, "pool", (k % self.size) as u64))
    }
}

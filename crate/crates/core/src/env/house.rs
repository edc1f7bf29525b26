//! Procedural multi-room grid houses.

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Grid coordinate `(x, y)`; x grows east, y grows south.
pub type Cell = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tile {
    Free,
    Wall,
    Obstacle,
}

impl Tile {
    pub fn blocked(self) -> bool {
        self != Tile::Free
    }

    fn symbol(self) -> char {
        match self {
            Tile::Free => '.',
            Tile::Wall => '#',
            Tile::Obstacle => 'o',
        }
    }

    fn from_symbol(c: char) -> Result<Tile> {
        match c {
            '.' => Ok(Tile::Free),
            '#' => Ok(Tile::Wall),
            'o' => Ok(Tile::Obstacle),
            other => Err(Error::invalid(format!("unknown grid symbol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchTag {
    Up,
    Level,
    Down,
}

/// Fixed 16-category object catalog with the pitch each category is seen at.
///
/// `Level` objects are furniture and occupy an obstacle cell, `Down` objects
/// lie on a free floor cell, `Up` objects sit on a wall cell facing a free cell.
pub const CATALOG: [(&str, PitchTag); 16] = [
    ("AlarmClock", PitchTag::Up),
    ("Apple", PitchTag::Up),
    ("BaseballBat", PitchTag::Down),
    ("BasketBall", PitchTag::Down),
    ("Bed", PitchTag::Level),
    ("Bowl", PitchTag::Up),
    ("Chair", PitchTag::Level),
    ("GarbageCan", PitchTag::Down),
    ("HousePlant", PitchTag::Down),
    ("Laptop", PitchTag::Up),
    ("Mug", PitchTag::Up),
    ("Sofa", PitchTag::Level),
    ("SprayBottle", PitchTag::Down),
    ("Television", PitchTag::Level),
    ("Toilet", PitchTag::Level),
    ("Vase", PitchTag::Up),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseObject {
    pub category: String,
    pub x: i32,
    pub y: i32,
    pub pitch_tag: PitchTag,
}

impl HouseObject {
    pub fn cell(&self) -> Cell {
        (self.x, self.y)
    }
}

/// Inclusive rectangle of room interior cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Room {
    fn width(&self) -> i32 {
        self.x1 - self.x0 + 1
    }
    fn height(&self) -> i32 {
        self.y1 - self.y0 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseLayout {
    pub seed: RngSeed,
    pub config: EnvConfig,
    pub width: i32,
    pub height: i32,
    tiles: Vec<Tile>,
    pub rooms: Vec<Room>,
    pub doors: Vec<Cell>,
    pub objects: Vec<HouseObject>,
}

const NEIGHBORS: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

impl HouseLayout {
    pub fn in_bounds(&self, (x, y): Cell) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn index(&self, (x, y): Cell) -> usize {
        (y * self.width + x) as usize
    }

    pub fn tile(&self, c: Cell) -> Tile {
        if self.in_bounds(c) {
            self.tiles[self.index(c)]
        } else {
            Tile::Wall
        }
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.tile(c) == Tile::Free
    }

    pub fn cell_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    pub fn free_neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS.iter().map(move |(dx, dy)| (c.0 + dx, c.1 + dy)).filter(|&n| self.is_free(n))
    }

    /// BFS hop counts from a set of `(cell, initial hops)` sources; `u32::MAX` where unreachable.
    pub fn bfs_field(&self, sources: &[(Cell, u32)]) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.tiles.len()];
        let mut queue = VecDeque::new();
        let mut seeds: Vec<(Cell, u32)> = sources.iter().copied().filter(|(c, _)| self.is_free(*c)).collect();
        seeds.sort_by_key(|(_, d)| *d);
        // sources may start at different depths, so a plain FIFO needs them in order
        let mut pending = seeds.into_iter().peekable();
        loop {
            let front = queue.front().map(|&(_, d): &(Cell, u32)| d);
            let take_seed = match (pending.peek(), front) {
                (Some(&(_, sd)), Some(fd)) => sd <= fd,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let (c, d) = if take_seed {
                let (c, d) = pending.next().unwrap();
                let i = self.index(c);
                if dist[i] <= d {
                    continue;
                }
                dist[i] = d;
                (c, d)
            } else {
                queue.pop_front().unwrap()
            };
            if dist[self.index(c)] < d {
                continue;
            }
            for n in self.free_neighbors(c) {
                let i = self.index(n);
                if dist[i] > d + 1 {
                    dist[i] = d + 1;
                    queue.push_back((n, d + 1));
                }
            }
        }
        dist
    }

    /// Geodesic (4-connected BFS) distance in meters.
    pub fn shortest_path_distance(&self, from: Cell, to: Cell) -> Result<f64> {
        if !self.is_free(from) || !self.is_free(to) {
            return Err(Error::invalid(format!("cells {from:?} and {to:?} must both be free")));
        }
        let field = self.bfs_field(&[(from, 0)]);
        match field[self.index(to)] {
            u32::MAX => Err(Error::Unreachable(format!("{from:?} -> {to:?}"))),
            hops => Ok(hops as f64 * self.config.cell_size_m),
        }
    }

    /// Largest Euclidean distance from `from` to any free cell, in meters.
    pub fn farthest_distance(&self, from: Cell) -> Result<f64> {
        if !self.is_free(from) {
            return Err(Error::invalid(format!("cell {from:?} is not free")));
        }
        Ok(self
            .free_cells()
            .into_iter()
            .map(|c| euclid(from, c))
            .fold(0.0, f64::max)
            * self.config.cell_size_m)
    }

    /// Free cell farthest (Euclidean) from `from`; ties broken by scan order.
    pub fn farthest_cell(&self, from: Cell) -> Cell {
        let mut best = (from, 0.0);
        for c in self.free_cells() {
            let d = euclid(from, c);
            if d > best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&start) = free.first() else { return true };
        let field = self.bfs_field(&[(start, 0)]);
        free.iter().all(|&c| field[self.index(c)] != u32::MAX)
    }

    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = self.objects.iter().map(|o| o.category.clone()).collect();
        cats.sort();
        cats.dedup();
        cats
    }

    /// BFS sources whose field value is the hop count to stand next to (or on) an object.
    pub fn approach_sources(&self, category: &str) -> Vec<(Cell, u32)> {
        let mut out = Vec::new();
        for o in self.objects.iter().filter(|o| o.category == category) {
            let c = o.cell();
            if self.is_free(c) {
                out.push((c, 0));
            } else {
                out.extend(self.free_neighbors(c).map(|n| (n, 1)));
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|y| (0..self.width).map(|x| self.tile((x, y)).symbol()).collect())
            .collect()
    }

    pub fn to_file(&self) -> HouseFile {
        HouseFile {
            seed: self.seed,
            config: self.config.clone(),
            grid: self.rows(),
            objects: self.objects.clone(),
        }
    }

    pub fn from_file(file: &HouseFile) -> Result<HouseLayout> {
        let height = file.grid.len() as i32;
        let width = file.grid.first().map(|r| r.chars().count()).unwrap_or(0) as i32;
        if height == 0 || width == 0 || file.grid.iter().any(|r| r.chars().count() as i32 != width) {
            return Err(Error::invalid("grid rows must be non-empty and equally long"));
        }
        let tiles = file
            .grid
            .iter()
            .flat_map(|r| r.chars().map(Tile::from_symbol))
            .collect::<Result<Vec<_>>>()?;
        Ok(HouseLayout {
            seed: file.seed,
            config: file.config.clone(),
            width,
            height,
            tiles,
            rooms: Vec::new(),
            doors: Vec::new(),
            objects: file.objects.clone(),
        })
    }

    /// Builds a layout directly from grid rows; used by scripted scenarios.
    pub fn from_rows(rows: &[&str], objects: Vec<HouseObject>, config: EnvConfig) -> Result<HouseLayout> {
        HouseLayout::from_file(&HouseFile {
            seed: RngSeed(0),
            config,
            grid: rows.iter().map(|r| r.to_string()).collect(),
            objects,
        })
    }

    fn set(&mut self, c: Cell, t: Tile) {
        let i = self.index(c);
        self.tiles[i] = t;
    }
}

pub fn euclid(a: Cell, b: Cell) -> f64 {
    (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt()
}

/// House file: `{seed, config, grid, objects}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HouseFile {
    pub seed: RngSeed,
    pub config: EnvConfig,
    pub grid: Vec<String>,
    pub objects: Vec<HouseObject>,
}

const MIN_ROOM_SIDE: i32 = 3;
const GENERATION_ATTEMPTS: u64 = 32;

/// Generates a connected house by recursive rectangular partition with door carving.
pub fn generate_house(seed: RngSeed, config: &EnvConfig) -> Result<HouseLayout> {
    config.validate()?;
    let (w, h) = (config.width as i32, config.height as i32);
    // the densest split packs rooms of MIN_ROOM_SIDE separated by one wall cell
    let max_rooms = (((w - 2 + 1) / (MIN_ROOM_SIDE + 1)) * ((h - 2 + 1) / (MIN_ROOM_SIDE + 1))) as usize;
    if config.rooms.0 > max_rooms {
        return Err(Error::GenerationFailure(format!(
            "{} rooms requested but a {}x{} grid fits at most {}",
            config.rooms.0, w, h, max_rooms
        )));
    }
    let mut last = String::new();
    for attempt in 0..GENERATION_ATTEMPTS {
        let mut rng = seed.derive_named("house", attempt).stream();
        match try_generate(seed, config, &mut rng) {
            Ok(layout) => return Ok(layout),
            Err(e) => last = e,
        }
    }
    Err(Error::GenerationFailure(format!("no valid layout after {GENERATION_ATTEMPTS} attempts: {last}")))
}

fn try_generate<R: Rng>(seed: RngSeed, config: &EnvConfig, rng: &mut R) -> std::result::Result<HouseLayout, String> {
    let (w, h) = (config.width as i32, config.height as i32);
    let mut layout = HouseLayout {
        seed,
        config: config.clone(),
        width: w,
        height: h,
        tiles: vec![Tile::Free; (w * h) as usize],
        rooms: vec![Room { x0: 1, y0: 1, x1: w - 2, y1: h - 2 }],
        doors: Vec::new(),
        objects: Vec::new(),
    };
    for x in 0..w {
        layout.set((x, 0), Tile::Wall);
        layout.set((x, h - 1), Tile::Wall);
    }
    for y in 0..h {
        layout.set((0, y), Tile::Wall);
        layout.set((w - 1, y), Tile::Wall);
    }

    let target_rooms = rng.random_range(config.rooms.0..=config.rooms.1);
    while layout.rooms.len() < target_rooms {
        if !split_room(&mut layout, rng) {
            if layout.rooms.len() >= config.rooms.0 {
                break;
            }
            return Err(format!("could only carve {} of {} rooms", layout.rooms.len(), config.rooms.0));
        }
    }
    if !layout.is_connected() {
        return Err("partition left disconnected regions".into());
    }
    place_objects(&mut layout, rng)?;
    if !layout.is_connected() {
        return Err("object placement disconnected the house".into());
    }
    Ok(layout)
}

/// Splits the largest splittable room with a wall and a one-cell door.
fn split_room<R: Rng>(layout: &mut HouseLayout, rng: &mut R) -> bool {
    let mut order: Vec<usize> = (0..layout.rooms.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(layout.rooms[i].width() * layout.rooms[i].height()));
    for i in order {
        let room = layout.rooms[i];
        let vertical_first = room.width() > room.height() || (room.width() == room.height() && rng.random_bool(0.5));
        for vertical in [vertical_first, !vertical_first] {
            let (lo, hi) = if vertical { (room.x0, room.x1) } else { (room.y0, room.y1) };
            // wall position p leaves at least MIN_ROOM_SIDE cells each side
            let candidates: Vec<i32> = (lo + MIN_ROOM_SIDE..=hi - MIN_ROOM_SIDE)
                .filter(|&p| {
                    // the wall must not butt into an existing door
                    let ends = if vertical {
                        [(p, room.y0 - 1), (p, room.y1 + 1)]
                    } else {
                        [(room.x0 - 1, p), (room.x1 + 1, p)]
                    };
                    ends.iter().all(|&c| layout.tile(c) == Tile::Wall)
                })
                .collect();
            let Some(&p) = candidates.choose(rng) else { continue };
            let span: Vec<Cell> = if vertical {
                (room.y0..=room.y1).map(|y| (p, y)).collect()
            } else {
                (room.x0..=room.x1).map(|x| (x, p)).collect()
            };
            for &c in &span {
                layout.set(c, Tile::Wall);
            }
            let door = span[rng.random_range(0..span.len())];
            layout.set(door, Tile::Free);
            layout.doors.push(door);
            let (a, b) = if vertical {
                (Room { x1: p - 1, ..room }, Room { x0: p + 1, ..room })
            } else {
                (Room { y1: p - 1, ..room }, Room { y0: p + 1, ..room })
            };
            layout.rooms[i] = a;
            layout.rooms.push(b);
            return true;
        }
    }
    false
}

fn near_door(layout: &HouseLayout, c: Cell) -> bool {
    layout.doors.iter().any(|d| (d.0 - c.0).abs() + (d.1 - c.1).abs() <= 1)
}

fn place_objects<R: Rng>(layout: &mut HouseLayout, rng: &mut R) -> std::result::Result<(), String> {
    let config = layout.config.clone();
    let count = rng.random_range(config.objects.0..=config.objects.1);
    let mut taken: Vec<Cell> = Vec::new();
    let mut attempts = 0;
    while layout.objects.len() < count {
        attempts += 1;
        if attempts > 200 * count.max(1) {
            return Err(format!("placed only {} of {} objects", layout.objects.len(), count));
        }
        let (name, pitch) = CATALOG[rng.random_range(0..CATALOG.len())];
        let room = layout.rooms[rng.random_range(0..layout.rooms.len())];
        let cell = match pitch {
            PitchTag::Level | PitchTag::Down => {
                (rng.random_range(room.x0..=room.x1), rng.random_range(room.y0..=room.y1))
            }
            PitchTag::Up => {
                // a wall cell bordering this room, found by stepping out of an edge cell
                let side = rng.random_range(0..4);
                match side {
                    0 => (rng.random_range(room.x0..=room.x1), room.y0 - 1),
                    1 => (room.x1 + 1, rng.random_range(room.y0..=room.y1)),
                    2 => (rng.random_range(room.x0..=room.x1), room.y1 + 1),
                    _ => (room.x0 - 1, rng.random_range(room.y0..=room.y1)),
                }
            }
        };
        if taken.contains(&cell) || near_door(layout, cell) {
            continue;
        }
        match pitch {
            PitchTag::Down => {
                if !layout.is_free(cell) {
                    continue;
                }
            }
            PitchTag::Up => {
                if layout.tile(cell) != Tile::Wall || layout.free_neighbors(cell).next().is_none() {
                    continue;
                }
            }
            PitchTag::Level => {
                if !layout.is_free(cell) {
                    continue;
                }
                layout.set(cell, Tile::Obstacle);
                let stranded = layout
                    .objects
                    .iter()
                    .any(|o| !layout.is_free(o.cell()) && layout.free_neighbors(o.cell()).next().is_none());
                if stranded || !layout.is_connected() || layout.free_neighbors(cell).next().is_none() {
                    layout.set(cell, Tile::Free);
                    continue;
                }
            }
        }
        taken.push(cell);
        layout.objects.push(HouseObject { category: name.to_string(), x: cell.0, y: cell.1, pitch_tag: pitch });
    }
    Ok(())
}

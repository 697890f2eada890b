//! ASCII tile maps.
//!
//! A map document is a short header followed by the tile grid:
//!
//! ```text
//! map 38 BEDROOM
//! size 8 8
//! warp 3 7 37 6 1
//! ########
//! #......#
//! ...
//! ###W####
//! ```
//!
//! `warp <x> <y> <target_map> <tx> <ty>` and `event <x> <y> <event_id>` lines give
//! meaning to the `W` and `E` placeholders. Grid characters are `#` wall, `.` floor,
//! `G` grass, `W` warp, `E` event tile and `N` npc.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type MapId = u8;
pub type EventId = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: u8,
    pub y: u8,
}

impl Pos {
    pub const fn new(x: u8, y: u8) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WarpTarget {
    pub map: MapId,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    Floor,
    Wall,
    Warp(WarpTarget),
    Grass,
    EventTile(EventId),
    Npc,
}

impl TileKind {
    /// Tiles the player may stand on.
    pub fn is_walkable(self) -> bool {
        matches!(
            self,
            TileKind::Floor | TileKind::Grass | TileKind::Warp(_) | TileKind::EventTile(_)
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("missing `{0}` header")]
    MissingHeader(&'static str),
    #[error("row {row}: expected {expected} columns, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("row {row}, column {col}: unknown tile character {ch:?}")]
    BadChar { row: usize, col: usize, ch: char },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("map size {width}x{height} must be at least 1x1 and at most 255x255")]
    BadSize { width: usize, height: usize },
    #[error("warp tile at ({x}, {y}) has no warp declaration")]
    UndeclaredWarp { x: u8, y: u8 },
    #[error("event tile at ({x}, {y}) has no event declaration")]
    UndeclaredEvent { x: u8, y: u8 },
    #[error("declaration at ({x}, {y}) does not sit on a matching placeholder tile")]
    DanglingDeclaration { x: u8, y: u8 },
    #[error("declaration at ({x}, {y}) is out of bounds")]
    OutOfBounds { x: u8, y: u8 },
    #[error("border tile at ({x}, {y}) must be a wall or a warp")]
    OpenBorder { x: u8, y: u8 },
    #[error("map {map}: warp at ({x}, {y}) targets missing map {target}")]
    MissingTargetMap { map: MapId, x: u8, y: u8, target: MapId },
    #[error("map {map}: warp at ({x}, {y}) targets an out-of-bounds or wall tile")]
    BadWarpTarget { map: MapId, x: u8, y: u8 },
    #[error("duplicate map id {0}")]
    DuplicateMap(MapId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileMap {
    pub id: MapId,
    pub name: String,
    width: u8,
    height: u8,
    tiles: Vec<TileKind>,
}

impl TileMap {
    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn height(&self) -> u8 {
        self.height
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < i32::from(self.width) && y < i32::from(self.height)
    }

    pub fn tile(&self, pos: Pos) -> TileKind {
        self.tiles[usize::from(pos.y) * usize::from(self.width) + usize::from(pos.x)]
    }

    /// Tile lookup with signed coordinates; `None` outside the grid.
    pub fn tile_at(&self, x: i32, y: i32) -> Option<TileKind> {
        self.in_bounds(x, y)
            .then(|| self.tile(Pos::new(x as u8, y as u8)))
    }

    pub fn positions(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Pos::new(x, y)))
    }

    pub fn warps(&self) -> impl Iterator<Item = (Pos, WarpTarget)> + '_ {
        self.positions().filter_map(|p| match self.tile(p) {
            TileKind::Warp(t) => Some((p, t)),
            _ => None,
        })
    }
}

fn header_err(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError::Header {
        line,
        reason: reason.into(),
    }
}

fn parse_fields<const N: usize>(line_no: usize, rest: &[&str]) -> Result<[u8; N], ParseError> {
    if rest.len() != N {
        return Err(header_err(
            line_no,
            format!("expected {N} integer fields, found {}", rest.len()),
        ));
    }
    let mut out = [0u8; N];
    for (slot, raw) in out.iter_mut().zip(rest) {
        *slot = raw
            .parse()
            .map_err(|_| header_err(line_no, format!("not a small integer: {raw:?}")))?;
    }
    Ok(out)
}

/// Parses and validates a single map document. Warp targets are checked against
/// other maps later, in [`crate::world::World::new`].
pub fn load_tilemap(text: &str) -> Result<TileMap, MapError> {
    let mut id = None;
    let mut name = String::new();
    let mut size = None;
    let mut warps: BTreeMap<(u8, u8), WarpTarget> = BTreeMap::new();
    let mut events: BTreeMap<(u8, u8), EventId> = BTreeMap::new();
    let mut rows: Vec<&str> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if size.is_some() && rows.len() < size.map_or(0, |(_, h)| h) {
            // Once the size is known, every non-declaration line is a grid row.
            let first = line.split_whitespace().next().unwrap_or("");
            if !matches!(first, "warp" | "event") {
                rows.push(line);
                continue;
            }
        }
        if line.trim().is_empty() || line.trim_start().starts_with(';') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts[0] {
            "map" => {
                if parts.len() < 2 {
                    return Err(header_err(line_no, "map line needs an id").into());
                }
                let [v] = parse_fields::<1>(line_no, &parts[1..2])?;
                id = Some(v);
                name = parts[2..].join(" ");
            }
            "size" => {
                let w: usize = parts.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| header_err(line_no, "bad width"))?;
                let h: usize = parts.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| header_err(line_no, "bad height"))?;
                if parts.len() != 3 {
                    return Err(header_err(line_no, "size line takes two fields").into());
                }
                if w == 0 || h == 0 || w > 255 || h > 255 {
                    return Err(ValidationError::BadSize { width: w, height: h }.into());
                }
                size = Some((w, h));
            }
            "warp" => {
                let [x, y, map, tx, ty] = parse_fields::<5>(line_no, &parts[1..])?;
                warps.insert(
                    (x, y),
                    WarpTarget {
                        map,
                        pos: Pos::new(tx, ty),
                    },
                );
            }
            "event" => {
                let [x, y, ev] = parse_fields::<3>(line_no, &parts[1..])?;
                events.insert((x, y), ev);
            }
            other => {
                if size.is_none() {
                    return Err(ParseError::MissingHeader("size").into());
                }
                return Err(header_err(line_no, format!("unexpected line starting with {other:?}")).into());
            }
        }
    }

    let id = id.ok_or(ParseError::MissingHeader("map"))?;
    let (width, height) = size.ok_or(ParseError::MissingHeader("size"))?;
    if rows.len() != height {
        return Err(ParseError::RowCount {
            expected: height,
            found: rows.len(),
        }
        .into());
    }

    let mut tiles = Vec::with_capacity(width * height);
    for (y, row) in rows.iter().enumerate() {
        let chars: Vec<char> = row.chars().collect();
        if chars.len() != width {
            return Err(ParseError::RaggedRow {
                row: y,
                expected: width,
                found: chars.len(),
            }
            .into());
        }
        for (x, ch) in chars.into_iter().enumerate() {
            let (xu, yu) = (x as u8, y as u8);
            let tile = match ch {
                '#' => TileKind::Wall,
                '.' => TileKind::Floor,
                'G' => TileKind::Grass,
                'N' => TileKind::Npc,
                'W' => TileKind::Warp(
                    *warps
                        .get(&(xu, yu))
                        .ok_or(ValidationError::UndeclaredWarp { x: xu, y: yu })?,
                ),
                'E' => TileKind::EventTile(
                    *events
                        .get(&(xu, yu))
                        .ok_or(ValidationError::UndeclaredEvent { x: xu, y: yu })?,
                ),
                ch => return Err(ParseError::BadChar { row: y, col: x, ch }.into()),
            };
            tiles.push(tile);
        }
    }

    let map = TileMap {
        id,
        name,
        width: width as u8,
        height: height as u8,
        tiles,
    };

    for &(x, y) in warps.keys() {
        match map.tile_at(i32::from(x), i32::from(y)) {
            None => return Err(ValidationError::OutOfBounds { x, y }.into()),
            Some(TileKind::Warp(_)) => {}
            Some(_) => return Err(ValidationError::DanglingDeclaration { x, y }.into()),
        }
    }
    for &(x, y) in events.keys() {
        match map.tile_at(i32::from(x), i32::from(y)) {
            None => return Err(ValidationError::OutOfBounds { x, y }.into()),
            Some(TileKind::EventTile(_)) => {}
            Some(_) => return Err(ValidationError::DanglingDeclaration { x, y }.into()),
        }
    }
    for p in map.positions() {
        let border = p.x == 0 || p.y == 0 || p.x + 1 == map.width || p.y + 1 == map.height;
        if border && !matches!(map.tile(p), TileKind::Wall | TileKind::Warp(_)) {
            // A 1-wide or 1-tall map is all border; only the interior rule is relaxed there.
            if map.width > 2 && map.height > 2 {
                return Err(ValidationError::OpenBorder { x: p.x, y: p.y }.into());
            }
        }
    }
    Ok(map)
}

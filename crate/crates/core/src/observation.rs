//! Grayscale frames, per-map visited masks and the stacked 8-channel observation.
//!
//! The viewport is 9 x 10 tiles of 8 x 8 pixels (72 x 80), with the player on tile
//! row 4, column 4. Visited tiles are stored in map-global coordinates, so a marked
//! tile keeps its world position as the camera scrolls.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::battle::{BattleState, Phase};
use crate::tilemap::{MapId, Pos, TileKind};
use crate::world::{World, WorldState};

pub const FRAME_H: usize = 72;
pub const FRAME_W: usize = 80;
pub const FRAME_LEN: usize = FRAME_H * FRAME_W;
pub const TILE_PX: usize = 8;
pub const VIEW_ROWS: usize = FRAME_H / TILE_PX;
pub const VIEW_COLS: usize = FRAME_W / TILE_PX;
pub const PLAYER_VIEW_ROW: i32 = 4;
pub const PLAYER_VIEW_COL: i32 = 4;
pub const STACK_DEPTH: usize = 4;
pub const CHANNELS: usize = 2 * STACK_DEPTH;
pub const OBS_LEN: usize = CHANNELS * FRAME_LEN;

pub mod palette {
    pub const OUT_OF_MAP: u8 = 0;
    pub const WALL: u8 = 40;
    pub const NPC: u8 = 90;
    pub const GRASS: u8 = 120;
    pub const EVENT: u8 = 180;
    pub const FLOOR: u8 = 200;
    pub const WARP: u8 = 230;
    pub const PLAYER: u8 = 255;

    pub const BATTLE_BG: u8 = 200;
    pub const HP_FILLED: u8 = 40;
    pub const HP_EMPTY: u8 = 120;
    pub const TEXT_BOX: u8 = 230;
    pub const MENU_ITEM: u8 = 90;
    pub const CURSOR: u8 = 0;

    pub const MASK_ON: u8 = 255;
}

/// Battle screen geometry, in pixels.
pub mod battle_layout {
    pub const BAR_X: usize = 8;
    pub const BAR_LEN: usize = 64;
    pub const BAR_H: usize = 4;
    pub const ENEMY_BAR_Y: usize = 8;
    pub const PLAYER_BAR_Y: usize = 36;
    pub const MENU_Y: [usize; 2] = [52, 62];
    pub const MENU_ITEM_X: usize = 16;
    pub const MENU_ITEM_W: usize = 40;
    pub const CURSOR_X: usize = 6;
    pub const ITEM_H: usize = 6;
}

#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pixels: Box<[u8; FRAME_LEN]>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame(72x80)")
    }
}

impl Frame {
    pub fn filled(v: u8) -> Self {
        Self {
            pixels: Box::new([v; FRAME_LEN]),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * FRAME_W + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.pixels[row * FRAME_W + col] = v;
    }

    pub fn fill_rect(&mut self, row: usize, col: usize, h: usize, w: usize, v: u8) {
        for r in row..(row + h).min(FRAME_H) {
            let start = r * FRAME_W + col;
            let end = r * FRAME_W + (col + w).min(FRAME_W);
            self.pixels[start..end].fill(v);
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels[..]
    }

    /// Binary PGM ("P5") encoding, 80 x 72, maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{FRAME_W} {FRAME_H}\n255\n").into_bytes();
        out.extend_from_slice(self.as_bytes());
        out
    }
}

/// Map-global tile shown at viewport tile (row, col) when the player stands at `player`.
pub fn view_to_map(player: Pos, view_row: usize, view_col: usize) -> (i32, i32) {
    (
        i32::from(player.x) + view_col as i32 - PLAYER_VIEW_COL,
        i32::from(player.y) + view_row as i32 - PLAYER_VIEW_ROW,
    )
}

/// Viewport tile (row, col) of a map tile, if it is on screen.
pub fn map_to_view(player: Pos, tile: Pos) -> Option<(usize, usize)> {
    let col = i32::from(tile.x) - i32::from(player.x) + PLAYER_VIEW_COL;
    let row = i32::from(tile.y) - i32::from(player.y) + PLAYER_VIEW_ROW;
    ((0..VIEW_ROWS as i32).contains(&row) && (0..VIEW_COLS as i32).contains(&col))
        .then_some((row as usize, col as usize))
}

fn tile_intensity(tile: Option<TileKind>) -> u8 {
    match tile {
        None => palette::OUT_OF_MAP,
        Some(TileKind::Wall) => palette::WALL,
        Some(TileKind::Floor) => palette::FLOOR,
        Some(TileKind::Grass) => palette::GRASS,
        Some(TileKind::Warp(_)) => palette::WARP,
        Some(TileKind::EventTile(_)) => palette::EVENT,
        Some(TileKind::Npc) => palette::NPC,
    }
}

/// Filled length of an HP bar, rounded down.
pub fn hp_bar_len(hp: i32, max: i32) -> usize {
    if max <= 0 {
        return 0;
    }
    (hp.clamp(0, max) as usize * battle_layout::BAR_LEN) / max as usize
}

fn render_battle(b: &BattleState) -> Frame {
    use battle_layout::*;
    let mut f = Frame::filled(palette::BATTLE_BG);
    for (y, hp, max) in [(ENEMY_BAR_Y, b.enemy_hp, b.enemy_hp_max), (PLAYER_BAR_Y, b.player_hp, b.player_hp_max)] {
        f.fill_rect(y, BAR_X, BAR_H, BAR_LEN, palette::HP_EMPTY);
        f.fill_rect(y, BAR_X, BAR_H, hp_bar_len(hp, max), palette::HP_FILLED);
    }
    match b.phase {
        Phase::ChooseMove => {
            for y in MENU_Y {
                f.fill_rect(y, MENU_ITEM_X, ITEM_H, MENU_ITEM_W, palette::MENU_ITEM);
            }
            let cy = MENU_Y[usize::from(b.cursor.min(1))];
            f.fill_rect(cy, CURSOR_X, ITEM_H, ITEM_H, palette::CURSOR);
        }
        Phase::ResolveText => {
            f.fill_rect(MENU_Y[0] - 2, 0, FRAME_H - (MENU_Y[0] - 2), FRAME_W, palette::TEXT_BOX);
        }
    }
    f
}

/// Renders the grayscale frame for a state.
pub fn render_frame(state: &WorldState, world: &World) -> Frame {
    if let Some(b) = state.battle.as_ref().filter(|_| state.in_battle) {
        return render_battle(b);
    }
    let mut f = Frame::filled(palette::OUT_OF_MAP);
    let map = world.map(state.map_id);
    for vr in 0..VIEW_ROWS {
        for vc in 0..VIEW_COLS {
            let (x, y) = view_to_map(state.pos, vr, vc);
            let v = tile_intensity(map.and_then(|m| m.tile_at(x, y)));
            f.fill_rect(vr * TILE_PX, vc * TILE_PX, TILE_PX, TILE_PX, v);
        }
    }
    f.fill_rect(
        PLAYER_VIEW_ROW as usize * TILE_PX,
        PLAYER_VIEW_COL as usize * TILE_PX,
        TILE_PX,
        TILE_PX,
        palette::PLAYER,
    );
    f
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapMask {
    /// Where the player first entered this map during the episode.
    pub anchor: Pos,
    pub visited: BTreeSet<Pos>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisitedMaskStore {
    maps: BTreeMap<MapId, MapMask>,
}

impl VisitedMaskStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks the current tile; records the anchor on first entry to a map.
    pub fn update(&mut self, state: &WorldState) {
        self.maps
            .entry(state.map_id)
            .or_insert_with(|| MapMask {
                anchor: state.pos,
                visited: BTreeSet::new(),
            })
            .visited
            .insert(state.pos);
    }

    pub fn get(&self, map: MapId) -> Option<&MapMask> {
        self.maps.get(&map)
    }

    pub fn maps(&self) -> impl Iterator<Item = (MapId, &MapMask)> {
        self.maps.iter().map(|(k, v)| (*k, v))
    }

    /// Binary frame in the same viewport as [`render_frame`].
    pub fn rasterize(&self, state: &WorldState) -> Frame {
        let mut f = Frame::filled(0);
        if let Some(mask) = self.maps.get(&state.map_id) {
            for &tile in &mask.visited {
                if let Some((vr, vc)) = map_to_view(state.pos, tile) {
                    f.fill_rect(vr * TILE_PX, vc * TILE_PX, TILE_PX, TILE_PX, palette::MASK_ON);
                }
            }
        }
        f
    }
}

/// Channels-first 8 x 72 x 80 bytes: `[gray(t-3), mask(t-3), ..., gray(t), mask(t)]`.
#[derive(Clone, PartialEq, Eq)]
pub struct ObservationStack {
    data: Vec<u8>,
}

impl std::fmt::Debug for ObservationStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ObservationStack{:?}", self.shape())
    }
}

impl ObservationStack {
    pub fn shape(&self) -> (usize, usize, usize) {
        (CHANNELS, FRAME_H, FRAME_W)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn from_bytes(data: Vec<u8>) -> Option<Self> {
        (data.len() == OBS_LEN).then_some(Self { data })
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        &self.data[c * FRAME_LEN..(c + 1) * FRAME_LEN]
    }

    /// Channel values scaled to 0.0..=1.0.
    pub fn normalized(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v) / 255.0).collect()
    }
}

/// Stacks the most recent pairs, oldest first. Missing history replicates the
/// earliest pair.
pub fn stack(history: &VecDeque<(Frame, Frame)>) -> ObservationStack {
    assert!(!history.is_empty(), "stack needs at least one frame pair");
    let skip = history.len().saturating_sub(STACK_DEPTH);
    let recent: Vec<&(Frame, Frame)> = history.iter().skip(skip).collect();
    let pad = STACK_DEPTH - recent.len();
    let mut data = Vec::with_capacity(OBS_LEN);
    for slot in 0..STACK_DEPTH {
        let (gray, mask) = recent[slot.saturating_sub(pad)];
        data.extend_from_slice(gray.as_bytes());
        data.extend_from_slice(mask.as_bytes());
    }
    ObservationStack { data }
}

/// Rolling four-step frame history for one episode.
#[derive(Debug, Clone, Default)]
pub struct FrameHistory {
    pairs: VecDeque<(Frame, Frame)>,
}

impl FrameHistory {
    pub fn push(&mut self, gray: Frame, mask: Frame) {
        if self.pairs.len() == STACK_DEPTH {
            self.pairs.pop_front();
        }
        self.pairs.push_back((gray, mask));
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn latest(&self) -> Option<&(Frame, Frame)> {
        self.pairs.back()
    }

    pub fn stack(&self) -> ObservationStack {
        stack(&self.pairs)
    }
}

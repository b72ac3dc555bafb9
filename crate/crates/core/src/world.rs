//! Procedural paired ego/exo world.
//!
//! A scene is one hand (filled disc) interacting with one object (filled
//! rectangle) over a textured background inside the unit square. The exo view
//! is the whole square from a fixed camera; the ego view is a half-width
//! viewport that follows the hand with a one-frame lag, so the exo→ego
//! correspondence problem (viewpoint shift, partial visibility) is real while
//! ground-truth masks stay exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{data_err, Error, Result};
use crossview_tensor::rng;

pub const HAND_COLOR: [f32; 3] = [0.85, 0.62, 0.48];
pub const OBJECT_COLOR: [f32; 3] = [0.20, 0.42, 0.78];
pub const HAND_RADIUS: f64 = 0.10;
pub const OBJECT_HALF_EXTENT: [f64; 2] = [0.07, 0.06];
/// Per-axis jitter bound; keeps the displacement magnitude under 0.01.
const JITTER: f64 = 0.007;
/// Ego viewport side length in world units.
pub const EGO_SIDE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionId {
    PushLeft,
    PushRight,
    PickUp,
    PutDown,
    Stir,
    Idle,
}

impl ActionId {
    pub const ALL: [ActionId; 6] = [
        ActionId::PushLeft,
        ActionId::PushRight,
        ActionId::PickUp,
        ActionId::PutDown,
        ActionId::Stir,
        ActionId::Idle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionId::PushLeft => "push_left",
            ActionId::PushRight => "push_right",
            ActionId::PickUp => "pick_up",
            ActionId::PutDown => "put_down",
            ActionId::Stir => "stir",
            ActionId::Idle => "idle",
        }
    }

    pub fn parse(s: &str) -> Result<ActionId> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| data_err(format!("unknown action id {s:?}")))
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&a| a == self).unwrap() as u8
    }

    pub fn from_code(c: u8) -> Result<ActionId> {
        Self::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| data_err(format!("unknown action code {c}")))
    }
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub hand_center: [f64; 2],
    pub hand_radius: f64,
    pub object_center: [f64; 2],
    pub object_half_extent: [f64; 2],
    pub object_attached: bool,
    pub background_texture_seed: u64,
    /// Hand position of the previous frame: the ego viewport anchor.
    pub ego_anchor: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Ego,
    Exo,
}

fn clamp2(p: [f64; 2], margin: [f64; 2]) -> [f64; 2] {
    [
        p[0].clamp(margin[0], 1.0 - margin[0]),
        p[1].clamp(margin[1], 1.0 - margin[1]),
    ]
}

struct Script {
    /// Hand waypoint per frame, before jitter and clamping.
    waypoints: Vec<[f64; 2]>,
    attach: Option<usize>,
    detach: Option<usize>,
    object_start: [f64; 2],
}

/// Hand offset that grips the top edge of the object instead of covering it
/// (the hand paints over the object, so a centered grip would hide it).
fn grip_offset() -> [f64; 2] {
    [0.0, -(HAND_RADIUS + OBJECT_HALF_EXTENT[1] - 0.02)]
}

/// Linear approach from `h0` to `target` over frames `0..=attach`, then the
/// action-specific motion for the remaining frames.
fn fill_waypoints(
    n: usize,
    attach: usize,
    h0: [f64; 2],
    target: [f64; 2],
    after: impl Fn(usize) -> [f64; 2],
) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            if i <= attach {
                let t = i as f64 / attach.max(1) as f64;
                [h0[0] + t * (target[0] - h0[0]), h0[1] + t * (target[1] - h0[1])]
            } else {
                after(i - attach)
            }
        })
        .collect()
}

fn build_script(rng: &mut ChaCha8Rng, action: ActionId, n: usize) -> Script {
    let o0 = [
        0.45 + 0.10 * rng.random::<f64>(),
        0.45 + 0.10 * rng.random::<f64>(),
    ];
    let grip = grip_offset();
    let target = [o0[0] + grip[0], o0[1] + grip[1]];
    let attach = (n / 4).max(1);
    let moving = n - 1 - attach.min(n - 1);

    let mut approach_from = |dir: [f64; 2]| {
        [
            target[0] + 0.20 * dir[0] + 0.04 * (rng.random::<f64>() - 0.5),
            target[1] + 0.20 * dir[1] + 0.04 * (rng.random::<f64>() - 0.5),
        ]
    };

    match action {
        ActionId::PushLeft | ActionId::PushRight => {
            let sign = if action == ActionId::PushLeft { -1.0 } else { 1.0 };
            let avail = if sign < 0.0 { o0[0] - 0.15 } else { 0.85 - o0[0] };
            let dx = sign * (avail / moving.max(1) as f64).clamp(0.022, 0.028);
            let h0 = approach_from([-sign, 0.25]);
            let waypoints =
                fill_waypoints(n, attach, h0, target, |k| [target[0] + dx * k as f64, target[1]]);
            Script { waypoints, attach: Some(attach), detach: None, object_start: o0 }
        }
        ActionId::PickUp => {
            let avail = o0[1] + grip[1] - 0.12;
            let dy = (avail / moving.max(1) as f64).clamp(0.018, 0.025);
            let h0 = approach_from([0.6, 0.6]);
            let waypoints =
                fill_waypoints(n, attach, h0, target, |k| [target[0], target[1] - dy * k as f64]);
            Script { waypoints, attach: Some(attach), detach: None, object_start: o0 }
        }
        ActionId::PutDown => {
            // starts holding the object, lowers it, releases
            let detach = (3 * n / 4).max(1);
            let avail = 0.82 - o0[1];
            let dy = (avail / detach as f64).clamp(0.012, 0.022);
            let waypoints = (0..n)
                .map(|i| {
                    if i <= detach {
                        [target[0], target[1] + dy * i as f64]
                    } else {
                        let k = (i - detach) as f64;
                        [target[0], target[1] + dy * detach as f64 - 0.02 * k]
                    }
                })
                .collect();
            Script { waypoints, attach: Some(0), detach: Some(detach), object_start: o0 }
        }
        ActionId::Stir => {
            let h0 = approach_from([0.7, -0.5]);
            let radius = 0.055;
            let turns = 1.25;
            let waypoints = fill_waypoints(n, attach, h0, target, |k| {
                let r = radius * (k as f64 / 2.0).min(1.0);
                let th = std::f64::consts::TAU * turns * k as f64 / moving.max(1) as f64
                    - std::f64::consts::FRAC_PI_2;
                [target[0] + r * th.cos(), target[1] + r * th.sin()]
            });
            Script { waypoints, attach: Some(attach), detach: None, object_start: o0 }
        }
        ActionId::Idle => {
            let h0 = approach_from([0.9, 0.9]);
            Script { waypoints: vec![h0; n], attach: None, detach: None, object_start: o0 }
        }
    }
}

/// Deterministic trajectory for `n_frames` frames: scripted hand waypoints
/// plus seeded per-frame jitter; the object moves only while attached.
pub fn simulate(seed: u64, action: ActionId, n_frames: usize) -> Result<Vec<WorldState>> {
    if n_frames < 2 {
        return Err(data_err(format!("need at least 2 frames, got {n_frames}")));
    }
    let mut r = rng::stream(seed, "world-sim");
    let script = build_script(&mut r, action, n_frames);
    let tex_seed = rng::mix(seed, "world-texture");

    let hand_margin = [HAND_RADIUS, HAND_RADIUS];
    let mut states = Vec::with_capacity(n_frames);
    let mut object = script.object_start;
    let grip = grip_offset();
    let mut prev_hand: Option<[f64; 2]> = None;
    for i in 0..n_frames {
        let jx = JITTER * (2.0 * r.random::<f64>() - 1.0);
        let jy = JITTER * (2.0 * r.random::<f64>() - 1.0);
        let w = script.waypoints[i];
        let hand = clamp2([w[0] + jx, w[1] + jy], hand_margin);
        let attached = match (script.attach, script.detach) {
            (Some(a), Some(d)) => i >= a && i < d,
            (Some(a), None) => i >= a,
            _ => false,
        };
        if attached {
            object = clamp2([hand[0] - grip[0], hand[1] - grip[1]], OBJECT_HALF_EXTENT);
        }
        states.push(WorldState {
            hand_center: hand,
            hand_radius: HAND_RADIUS,
            object_center: object,
            object_half_extent: OBJECT_HALF_EXTENT,
            object_attached: attached,
            background_texture_seed: tex_seed,
            ego_anchor: prev_hand.unwrap_or(hand),
        });
        prev_hand = Some(hand);
    }
    Ok(states)
}

/// Smooth seeded background color at a world point, shared by both views.
fn texture(seed: u64, ch: usize, wx: f64, wy: f64) -> f32 {
    let mut s = seed ^ (ch as u64).wrapping_mul(0x9E37_79B9);
    let mut next = move || {
        let v = rng::splitmix64(&mut s);
        (v >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut v = 0.5;
    for (amp, fmax) in [(0.16, 7.0), (0.10, 13.0)] {
        let ax = 2.0 + fmax * next();
        let by = 2.0 + fmax * next();
        let ph = std::f64::consts::TAU * next();
        v += amp * (ax * wx + by * wy + ph).sin();
    }
    (v as f32).clamp(0.02, 0.98)
}

/// Viewport origin and side: exo sees the whole unit square, ego a half-width
/// window centered on the lagged hand position, clamped inside the world.
pub fn viewport(world: &WorldState, view: View) -> ([f64; 2], f64) {
    match view {
        View::Exo => ([0.0, 0.0], 1.0),
        View::Ego => {
            let half = EGO_SIDE / 2.0;
            let c = clamp2(world.ego_anchor, [half, half]);
            ([c[0] - half, c[1] - half], EGO_SIDE)
        }
    }
}

/// Rasterize one frame: `[3,res,res]` colors in `[0,1]` plus the exactly
/// consistent `{0,1,2}` class map. The hand paints over the object.
pub fn render(world: &WorldState, view: View, res: usize) -> Result<(Vec<f32>, Vec<u8>)> {
    if res < 16 {
        return Err(data_err(format!("render resolution must be >= 16, got {res}")));
    }
    let (origin, side) = viewport(world, view);
    let step = side / res as f64;
    let mut frame = vec![0f32; 3 * res * res];
    let mut mask = vec![0u8; res * res];
    let [hx, hy] = world.hand_center;
    let r2 = world.hand_radius * world.hand_radius;
    let [ox, oy] = world.object_center;
    let [ex, ey] = world.object_half_extent;
    for iy in 0..res {
        let wy = origin[1] + (iy as f64 + 0.5) * step;
        for ix in 0..res {
            let wx = origin[0] + (ix as f64 + 0.5) * step;
            let dhx = wx - hx;
            let dhy = wy - hy;
            let p = iy * res + ix;
            let cls = if dhx * dhx + dhy * dhy <= r2 {
                1u8
            } else if (wx - ox).abs() <= ex && (wy - oy).abs() <= ey {
                2u8
            } else {
                0u8
            };
            mask[p] = cls;
            for c in 0..3 {
                frame[c * res * res + p] = match cls {
                    1 => HAND_COLOR[c],
                    2 => OBJECT_COLOR[c],
                    _ => texture(world.background_texture_seed, c, wx, wy),
                };
            }
        }
    }
    Ok((frame, mask))
}

/// Static instruction vocabulary for the templated action phrases.
pub const VOCAB: [&str; 14] = [
    "the", "hand", "pushes", "object", "to", "left", "right", "picks", "up", "puts", "down",
    "stirs", "holds", "still",
];

pub fn vocab_size() -> usize {
    VOCAB.len()
}

/// Fixed token template per action; ids index [`VOCAB`].
pub fn instruction_tokens(action: ActionId) -> Vec<u16> {
    match action {
        ActionId::PushLeft => vec![0, 1, 2, 0, 3, 4, 0, 5],
        ActionId::PushRight => vec![0, 1, 2, 0, 3, 4, 0, 6],
        ActionId::PickUp => vec![0, 1, 7, 8, 0, 3],
        ActionId::PutDown => vec![0, 1, 9, 10, 0, 3],
        ActionId::Stir => vec![0, 1, 11, 0, 3],
        ActionId::Idle => vec![0, 1, 12, 13],
    }
}

/// Float video clip `[frames, 3, res, res]`, row-major, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: usize,
    pub res: usize,
    pub data: Vec<f32>,
}

impl Clip {
    pub fn new(frames: usize, res: usize) -> Self {
        Clip { frames, res, data: vec![0.0; frames * 3 * res * res] }
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        let sz = 3 * self.res * self.res;
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f32] {
        let sz = 3 * self.res * self.res;
        &mut self.data[n * sz..(n + 1) * sz]
    }
}

/// Per-frame class-id maps `[frames, res, res]` with values in `{0,1,2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskClip {
    pub frames: usize,
    pub res: usize,
    pub data: Vec<u8>,
}

impl MaskClip {
    pub fn new(frames: usize, res: usize) -> Self {
        MaskClip { frames, res, data: vec![0; frames * res * res] }
    }

    pub fn frame(&self, n: usize) -> &[u8] {
        let sz = self.res * self.res;
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [u8] {
        let sz = self.res * self.res;
        &mut self.data[n * sz..(n + 1) * sz]
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let sz = self.res * self.res;
        for (i, &v) in self.data.iter().enumerate() {
            if v > 2 {
                return Err(Error::Data(format!(
                    "{what}: mask value {v} outside {{0,1,2}} at frame {}, pixel {}",
                    i / sz,
                    i % sz
                )));
            }
        }
        Ok(())
    }
}

/// One synchronized ego/exo clip pair with exact masks and instruction tokens.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub ego: Clip,
    pub exo: Clip,
    pub ego_masks: MaskClip,
    pub exo_masks: MaskClip,
    pub tokens: Vec<u16>,
    pub seed: u64,
    pub action: ActionId,
}

pub fn generate_sample(seed: u64, action: ActionId, n_frames: usize, res: usize) -> Result<PairedSample> {
    let states = simulate(seed, action, n_frames)?;
    let mut ego = Clip::new(n_frames, res);
    let mut exo = Clip::new(n_frames, res);
    let mut ego_masks = MaskClip::new(n_frames, res);
    let mut exo_masks = MaskClip::new(n_frames, res);
    for (n, w) in states.iter().enumerate() {
        let (f, m) = render(w, View::Ego, res)?;
        ego.frame_mut(n).copy_from_slice(&f);
        ego_masks.frame_mut(n).copy_from_slice(&m);
        let (f, m) = render(w, View::Exo, res)?;
        exo.frame_mut(n).copy_from_slice(&f);
        exo_masks.frame_mut(n).copy_from_slice(&m);
    }
    Ok(PairedSample {
        ego,
        exo,
        ego_masks,
        exo_masks,
        tokens: instruction_tokens(action),
        seed,
        action,
    })
}

/// Generate `count` samples cycling through `actions`. Per-sample seeds are
/// derived by hashing, so parallel and serial generation agree bit-exactly.
pub fn generate_dataset(
    master_seed: u64,
    count: usize,
    n_frames: usize,
    res: usize,
    actions: &[ActionId],
) -> Result<Vec<PairedSample>> {
    if count == 0 {
        return Err(data_err("empty dataset requested"));
    }
    if actions.is_empty() {
        return Err(data_err("empty action mix"));
    }
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|i| {
            generate_sample(
                rng::mix_index(master_seed, i as u64),
                actions[i % actions.len()],
                n_frames,
                res,
            )
        })
        .collect()
}

//! Side-view rasteriser for the visual setting.
//!
//! Orthographic projection onto the x–z plane of a 6 cm × 6 cm window whose
//! horizontal centre is the true socket. The y axis is dropped, so two states
//! that differ only in y render identically. Rectangles are area-sampled, so
//! sub-pixel plug motion shows up as intensity changes along the edges.

use std::io::Write;

use crate::control::scripted_insertion;
use crate::error::{Error, Result};
use crate::sim::{EnvConfig, EnvState};

pub const FRAME_SIZE: usize = 32;
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
pub const WINDOW_SIZE: f64 = 0.06;
/// Window bottom relative to the seated goal height (m).
pub const WINDOW_BELOW_GOAL: f64 = 0.005;
pub const SOCKET_INTENSITY: f64 = 0.4;
pub const PLUG_INTENSITY: f64 = 0.9;
pub const PLUG_HALF_WIDTH: f64 = 0.003;
pub const PLUG_HEIGHT: f64 = 0.020;
pub const SOCKET_HALF_WIDTH: f64 = 0.015;
pub const SOCKET_BASE: f64 = 0.003;

/// 32×32 grayscale image, row-major, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Vec<f64>,
}

impl Frame {
    pub fn filled(v: f64) -> Self {
        Self {
            pixels: vec![v.clamp(0.0, 1.0); FRAME_PIXELS],
        }
    }

    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != FRAME_PIXELS {
            return Err(Error::FrameShape(pixels.len(), FRAME_PIXELS));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("pixel outside [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * FRAME_SIZE + col]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{FRAME_SIZE} {FRAME_SIZE}\n255\n")?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: f64,
    x1: f64,
    z0: f64,
    z1: f64,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

fn paint(buf: &mut [f64], origin: (f64, f64), rect: Rect, intensity: f64) {
    if rect.x1 <= rect.x0 || rect.z1 <= rect.z0 {
        return;
    }
    let pitch = WINDOW_SIZE / FRAME_SIZE as f64;
    let area = pitch * pitch;
    let (left, top) = origin;
    let col_range = |a: f64, b: f64| {
        let lo = ((a - left) / pitch).floor().max(0.0) as usize;
        let hi = ((b - left) / pitch).ceil().min(FRAME_SIZE as f64).max(0.0) as usize;
        lo..hi
    };
    let row_range = |a: f64, b: f64| {
        let lo = ((top - b) / pitch).floor().max(0.0) as usize;
        let hi = ((top - a) / pitch).ceil().min(FRAME_SIZE as f64).max(0.0) as usize;
        lo..hi
    };
    for row in row_range(rect.z0, rect.z1) {
        let pz1 = top - row as f64 * pitch;
        let pz0 = pz1 - pitch;
        let dz = overlap(rect.z0, rect.z1, pz0, pz1);
        if dz <= 0.0 {
            continue;
        }
        for col in col_range(rect.x0, rect.x1) {
            let px0 = left + col as f64 * pitch;
            let dx = overlap(rect.x0, rect.x1, px0, px0 + pitch);
            buf[row * FRAME_SIZE + col] += intensity * dx * dz / area;
        }
    }
}

fn window_origin(config: &EnvConfig) -> (f64, f64) {
    let left = config.goal[0] - WINDOW_SIZE / 2.0;
    let top = config.goal[2] - WINDOW_BELOW_GOAL + WINDOW_SIZE;
    (left, top)
}

fn socket_rects(config: &EnvConfig) -> [Rect; 3] {
    let gx = config.goal[0];
    let s = config.profile.surface_height;
    let floor = config.floor_height();
    let gap = PLUG_HALF_WIDTH + config.profile.clearance;
    [
        Rect {
            x0: gx - SOCKET_HALF_WIDTH,
            x1: gx - gap,
            z0: floor,
            z1: s,
        },
        Rect {
            x0: gx + gap,
            x1: gx + SOCKET_HALF_WIDTH,
            z0: floor,
            z1: s,
        },
        Rect {
            x0: gx - SOCKET_HALF_WIDTH,
            x1: gx + SOCKET_HALF_WIDTH,
            z0: floor - SOCKET_BASE,
            z1: floor,
        },
    ]
}

/// Frame showing only the socket.
pub fn render_background(config: &EnvConfig) -> Frame {
    let mut buf = vec![0.0; FRAME_PIXELS];
    let origin = window_origin(config);
    for r in socket_rects(config) {
        paint(&mut buf, origin, r, SOCKET_INTENSITY);
    }
    for p in &mut buf {
        *p = p.clamp(0.0, 1.0);
    }
    Frame { pixels: buf }
}

/// Renders socket and plug; a pure function of `(state, config)`.
pub fn render(state: &EnvState, config: &EnvConfig) -> Frame {
    let mut buf = vec![0.0; FRAME_PIXELS];
    let origin = window_origin(config);
    for r in socket_rects(config) {
        paint(&mut buf, origin, r, SOCKET_INTENSITY);
    }
    let [px, _, pz] = state.pos;
    paint(
        &mut buf,
        origin,
        Rect {
            x0: px - PLUG_HALF_WIDTH,
            x1: px + PLUG_HALF_WIDTH,
            z0: pz,
            z1: pz + PLUG_HEIGHT,
        },
        PLUG_INTENSITY,
    );
    for p in &mut buf {
        *p = p.clamp(0.0, 1.0);
    }
    Frame { pixels: buf }
}

/// Runs the scripted insertion with `config.goal_estimate` as its target and
/// returns the terminal state together with its frame.
pub fn capture_goal_rollout(config: &EnvConfig) -> Result<(EnvState, Frame)> {
    let (terminal, inserted) = scripted_insertion(config)?;
    if !inserted {
        return Err(Error::GoalCaptureFailed);
    }
    let frame = render(&terminal, config);
    Ok((terminal, frame))
}

pub fn capture_goal_image(config: &EnvConfig) -> Result<Frame> {
    capture_goal_rollout(config).map(|(_, f)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ConnectorKind;

    fn state_at(pos: [f64; 3]) -> EnvState {
        EnvState {
            pos,
            f_z: 0.0,
            inserted: false,
            step_index: 0,
        }
    }

    #[test]
    fn plug_outside_window_gives_background() {
        let c = EnvConfig::new(ConnectorKind::UsbLike);
        let far = state_at([0.5, 0.0, 0.5]);
        assert_eq!(render(&far, &c), render_background(&c));
    }

    #[test]
    fn y_is_projected_away() {
        let c = EnvConfig::new(ConnectorKind::UsbLike);
        let a = state_at([0.0004, 0.0, 0.02]);
        let b = state_at([0.0004, 0.0015, 0.02]);
        assert_eq!(render(&a, &c), render(&b, &c));
    }

    #[test]
    fn goal_and_raised_plug_differ() {
        let c = EnvConfig::new(ConnectorKind::DSubLike);
        let at_goal = render(&state_at(c.goal), &c);
        let mut up = c.goal;
        up[2] += 0.010;
        let raised = render(&state_at(up), &c);
        let differing = at_goal
            .pixels()
            .iter()
            .zip(raised.pixels())
            .filter(|(a, b)| a != b)
            .count();
        assert!(differing >= 1);
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let c = EnvConfig::new(ConnectorKind::ModelELike);
        for z in [-0.0148, -0.01, 0.0, 0.013, 0.037, 0.06] {
            for x in [-0.0004, 0.0, 0.0003] {
                let f = render(&state_at([x, 0.0, z]), &c);
                assert!(f.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn interior_pixels_use_the_palette() {
        let c = EnvConfig::new(ConnectorKind::UsbLike);
        let f = render(&state_at([0.0, 0.0, 0.02]), &c);
        let counts = |v: f64| f.pixels().iter().filter(|&&p| (p - v).abs() < 1e-12).count();
        assert!(counts(0.0) > 500);
        assert!(counts(SOCKET_INTENSITY) > 10);
        assert!(counts(PLUG_INTENSITY) > 5);
    }

    #[test]
    fn sub_pixel_x_shift_changes_frame() {
        let c = EnvConfig::new(ConnectorKind::ModelELike);
        let a = render(&state_at([0.0, 0.0, 0.0]), &c);
        let b = render(&state_at([0.0003, 0.0, 0.0]), &c);
        assert_ne!(a, b);
    }

    #[test]
    fn pgm_header_and_size() {
        let f = Frame::filled(0.4);
        let mut out = Vec::new();
        f.write_pgm(&mut out).unwrap();
        assert!(out.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(out.len(), 13 + 1024);
        assert_eq!(out[20], 102);
    }
}
